"""Noise-prediction network: MLP-residual trunk with per-block attention
readout over the fused condition tokens, multi-head noise outputs, and the
entropy-aware modulation (EAM) weighting head.

The final combined noise is eps = (1/K) * sum_k (w_k * (n_k - n_b) + n_b);
with K = 0 the auxiliary heads and weighting module are absent and
eps = n_b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .conditioning import fuse, init_params as init_cond_params
from .facegen import ALL_MODALITIES

EAM_HIDDEN = 64


@dataclass
class DenoiserConfig:
    S: int = 16
    width: int = 128
    blocks: int = 4
    d: int = 64
    K: int = 3
    t_emb_dim: int = 32

    def __post_init__(self):
        if self.K < 0 or self.width < 1 or self.blocks < 1:
            raise ValueError(f"bad config {self}")


MICRO = DenoiserConfig(S=16, width=32, blocks=2, d=8, K=3)
DESK = DenoiserConfig()


@dataclass
class DenoiserOutput:
    n_b: "nm.Tensor"
    n_k: list
    w: "nm.Tensor | None"
    eps: "nm.Tensor"
    f_u: "nm.Tensor"


def eam_combine_np(n_b, n_ks, w):
    """Pure-array form of the noise combination, for composition callers."""
    n_b = np.asarray(n_b, dtype=np.float64)
    if len(n_ks) != len(w):
        raise ValueError(f"{len(n_ks)} aux maps vs {len(w)} weights")
    K = len(n_ks)
    if K == 0:
        return n_b.copy()
    acc = np.zeros_like(n_b)
    for nk, wk in zip(n_ks, w):
        acc += wk * (np.asarray(nk) - n_b) + n_b
    return acc / K


def time_embedding(t, T, dim):
    """Sinusoidal embedding, dim/2 frequencies geometric over periods 1..T."""
    half = dim // 2
    periods = np.exp(np.linspace(0.0, np.log(max(T, 2)), half))
    ang = 2.0 * np.pi * t / periods
    return np.concatenate([np.sin(ang), np.cos(ang)])


class Denoiser:
    """Owns the ParamStore (trunk + encoders + surrogates) for one model."""

    def __init__(self, cfg, seed=0, modalities=ALL_MODALITIES, decorate=True,
                 inter_modal=True, store=None):
        self.cfg = cfg
        self.modalities = tuple(modalities)
        self.decorate = decorate
        self.inter_modal = inter_modal
        self.forward_count = 0
        rng = np.random.default_rng(seed)
        self.store = store if store is not None else self._init(rng)

    def _init(self, rng):
        cfg = self.cfg
        store = nm.ParamStore()
        init_cond_params(store, cfg.S, cfg.d, rng, self.modalities,
                         surrogates=self.decorate)
        n_px = cfg.S * cfg.S

        def lin(name, n_out, n_in, std=None):
            std = std if std is not None else 1.0 / np.sqrt(n_in)
            store.add(f"{name}.W", rng.normal(0.0, std, size=(n_out, n_in)))
            store.add(f"{name}.b", np.zeros(n_out))

        lin("trunk.in", cfg.width, n_px)
        lin("temb.proj", cfg.width, cfg.t_emb_dim)
        for b in range(cfg.blocks):
            lin(f"block{b}.W1", cfg.width, 2 * cfg.width + cfg.d)
            lin(f"block{b}.W2", cfg.width, cfg.width)
            store.add(f"block{b}.q", rng.normal(0.0, 1.0, size=cfg.d))
            store.add(f"block{b}.Wk",
                      rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(cfg.d, cfg.d)))
            store.add(f"block{b}.Wv",
                      rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(cfg.d, cfg.d)))
        lin("head.base", n_px, cfg.width, std=0.02)
        for k in range(cfg.K):
            lin(f"head.aux{k}", n_px, cfg.width, std=0.02)
        if cfg.K > 0:
            lin("eam.L1", EAM_HIDDEN, cfg.d + cfg.width)
            # zero init: w = 2*sigmoid(0) = 1, no modulation at start
            store.add("eam.L2.W", np.zeros((cfg.K, EAM_HIDDEN)))
            store.add("eam.L2.b", np.zeros(cfg.K))
        return store

    def _linear(self, name, x):
        return nm.add(nm.matmul(self.store[f"{name}.W"], x),
                      self.store[f"{name}.b"])

    def tokens_for(self, cs):
        return fuse(self.store, cs, self.cfg.S, self.modalities,
                    self.decorate, self.inter_modal)

    def forward(self, x_t, t, cs, T):
        """x_t: S x S array (or flat); returns DenoiserOutput of graph tensors."""
        cfg = self.cfg
        if not 1 <= t <= T:
            raise ValueError(f"timestep {t} outside [1, {T}]")
        self.forward_count += 1
        x = nm.Tensor(np.asarray(x_t, dtype=np.float64).reshape(-1))
        seq = self.tokens_for(cs)
        if seq.tokens.shape[1] != cfg.d:
            raise nm.ShapeError(
                f"token dim {seq.tokens.shape[1]} vs model d {cfg.d}")
        tvec = self._linear("temb.proj",
                            nm.Tensor(time_embedding(t, T, cfg.t_emb_dim)))
        h = self._linear("trunk.in", x)
        inv_sqrt_d = 1.0 / np.sqrt(cfg.d)
        for b in range(cfg.blocks):
            keys = nm.matmul(seq.tokens, self.store[f"block{b}.Wk"])
            vals = nm.matmul(seq.tokens, self.store[f"block{b}.Wv"])
            scores = nm.scale(nm.matmul(keys, self.store[f"block{b}.q"]),
                              inv_sqrt_d)
            ctx = nm.matmul(nm.softmax(scores), vals)
            z = nm.concat([h, tvec, ctx])
            u = nm.silu(self._linear(f"block{b}.W1", z))
            h = nm.add(h, self._linear(f"block{b}.W2", u))
        f_u = h
        n_b = self._linear("head.base", f_u)
        n_ks = [self._linear(f"head.aux{k}", f_u) for k in range(cfg.K)]
        if cfg.K == 0:
            return DenoiserOutput(n_b, [], None, n_b, f_u)
        w = self.eam_weights(seq, f_u)
        acc = None
        for k in range(cfg.K):
            term = nm.add(nm.smul(nm.pick(w, k), nm.sub(n_ks[k], n_b)), n_b)
            acc = term if acc is None else nm.add(acc, term)
        eps = nm.scale(acc, 1.0 / cfg.K)
        return DenoiserOutput(n_b, n_ks, w, eps, f_u)

    def eam_weights(self, seq, f_u):
        pooled = nm.mean_pool(seq.tokens)
        hidden = nm.silu(self._linear("eam.L1", nm.concat([pooled, f_u])))
        return nm.scale(nm.sigmoid(self._linear("eam.L2", hidden)), 2.0)

    def predict_eps(self, x_t, t, cs, T):
        """Inference-only forward; returns the combined noise as an S x S array."""
        with nm.no_grad():
            out = self.forward(x_t, t, cs, T)
        return out.eps.data.reshape(self.cfg.S, self.cfg.S)
