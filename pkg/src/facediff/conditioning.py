"""Condition encoders, the per-modality surrogate bank, and token fusion.

Fusion contract: modalities are visited in fixed index order. An active
modality contributes its encoded tokens with its surrogate broadcast-added;
an inactive modality contributes its bare surrogate as a single token, so
every surrogate sees gradient from every training sample. The
`inter_modal=False` ablation drops the inactive-surrogate tokens instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .facegen import ALL_MODALITIES, ConditionSet, Modality

PATCH_GRID = 4   # tokens per image-like modality = PATCH_GRID**2
N_CLASSES = 5
N_ATTRS = 6

SURROGATE_NAMES = {
    Modality.MASK: "surrogate.mask",
    Modality.ATTR: "surrogate.attr",
    Modality.SKETCH: "surrogate.sketch",
    Modality.LOWRES: "surrogate.lowres",
}
ENC_PREFIX = {
    Modality.MASK: "enc.mask",
    Modality.ATTR: "enc.attr",
    Modality.SKETCH: "enc.sketch",
    Modality.LOWRES: "enc.lowres",
}


def token_count(m, S):
    return 1 if m == Modality.ATTR else PATCH_GRID * PATCH_GRID


def encoder_in_dim(m, S):
    patch = S // PATCH_GRID
    if m == Modality.MASK:
        return patch * patch * N_CLASSES
    if m == Modality.SKETCH:
        return patch * patch
    if m == Modality.LOWRES:
        lr_patch = (S // 4) // PATCH_GRID
        return max(1, lr_patch) * max(1, lr_patch)
    return N_ATTRS


@dataclass
class TokenSequence:
    tokens: "nm.Tensor"          # n x d
    tags: tuple                  # per-token Modality, or None for inactive slots

    @property
    def n(self):
        return self.tokens.shape[0]


def init_params(store, S, d, rng, modalities=ALL_MODALITIES, surrogates=True):
    """Register encoder weights and surrogates for the given modality universe."""
    for m in modalities:
        fan_in = encoder_in_dim(m, S)
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, d))
        store.add(f"{ENC_PREFIX[m]}.W", w)
        store.add(f"{ENC_PREFIX[m]}.b", np.zeros(d))
        if surrogates:
            store.add(SURROGATE_NAMES[m], rng.normal(0.0, 0.02, size=d))


def _patch_features(m, payload, S):
    """Per-token raw feature rows for an image-like payload."""
    if m == Modality.MASK:
        onehot = np.eye(N_CLASSES)[payload.astype(np.int64)]      # S x S x 5
        patch = S // PATCH_GRID
        feat = onehot.reshape(PATCH_GRID, patch, PATCH_GRID, patch, N_CLASSES)
        return feat.transpose(0, 2, 1, 3, 4).reshape(
            PATCH_GRID * PATCH_GRID, patch * patch * N_CLASSES)
    if m == Modality.SKETCH:
        patch = S // PATCH_GRID
        feat = payload.astype(np.float64).reshape(
            PATCH_GRID, patch, PATCH_GRID, patch)
        return feat.transpose(0, 2, 1, 3).reshape(
            PATCH_GRID * PATCH_GRID, patch * patch)
    if m == Modality.LOWRES:
        side = payload.shape[0]
        lr_patch = side // PATCH_GRID
        feat = payload.reshape(PATCH_GRID, lr_patch, PATCH_GRID, lr_patch)
        return feat.transpose(0, 2, 1, 3).reshape(
            PATCH_GRID * PATCH_GRID, lr_patch * lr_patch)
    raise ValueError(f"not an image-like modality: {m}")


def _check_payload(m, payload, S):
    if m == Modality.MASK:
        if payload.shape != (S, S):
            raise ValueError(f"MASK payload dims {payload.shape}, want {(S, S)}")
        if payload.min() < 0 or payload.max() >= N_CLASSES:
            raise ValueError("MASK classes outside 0..4")
    elif m == Modality.SKETCH:
        if payload.shape != (S, S):
            raise ValueError(f"SKETCH payload dims {payload.shape}, want {(S, S)}")
    elif m == Modality.LOWRES:
        want = (S // 4, S // 4)
        if payload.shape != want:
            raise ValueError(f"LOWRES payload dims {payload.shape}, want {want}")
    else:
        if payload.shape != (N_ATTRS,):
            raise ValueError(f"ATTR payload dims {payload.shape}, want ({N_ATTRS},)")


def encode(store, m, payload, S):
    """Encode one modality payload into its n_m x d token block."""
    payload = np.asarray(payload)
    _check_payload(m, payload, S)
    if m == Modality.ATTR:
        feat = payload.astype(np.float64)[None, :]
    else:
        feat = _patch_features(m, payload, S)
    w = store[f"{ENC_PREFIX[m]}.W"]
    b = store[f"{ENC_PREFIX[m]}.b"]
    return nm.broadcast_add(nm.matmul(nm.Tensor(feat), w), b)


def fuse(store, cs, S, modalities=ALL_MODALITIES, decorate=True,
         inter_modal=True):
    """Build the fused token sequence for a condition subset.

    decorate=False drops surrogates entirely (multi-modal no-surrogate
    ablation); inter_modal=False omits the bare tokens of inactive
    modalities (condition-decoration-only ablation).
    """
    parts, tags = [], []
    for m in modalities:
        if m in cs:
            block = encode(store, m, cs[m], S)
            if decorate:
                block = nm.broadcast_add(block, store[SURROGATE_NAMES[m]])
            parts.append(block)
            tags.extend([m] * block.shape[0])
        elif decorate and inter_modal:
            parts.append(nm.as_row(store[SURROGATE_NAMES[m]]))
            tags.append(None)
    if not parts:
        # no-surrogate model conditioned on nothing: a single zero token
        d = store[f"{ENC_PREFIX[modalities[0]]}.b"].shape[0]
        parts.append(nm.Tensor(np.zeros((1, d))))
        tags.append(None)
    return TokenSequence(nm.concat(parts), tuple(tags))
