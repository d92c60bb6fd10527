"""Alignment and quality metrics over the oracle-invertible face domain:
mask accuracy, attribute accuracy, sketch F1, low-res PSNR, and a Fréchet
distance over oracle feature vectors (PFD).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import facegen
from .facegen import Modality

PSNR_CAP = 99.0


@dataclass
class EvalReport:
    variant: str
    n: int
    metrics: dict        # name -> (mean, std)

    def row(self):
        out = {"variant": self.variant, "n": self.n}
        for k, (mu, sd) in self.metrics.items():
            out[k] = mu
            out[f"{k}_std"] = sd
        return out

    def __str__(self):
        lines = [f"variant {self.variant}  (n={self.n})"]
        for k, (mu, sd) in self.metrics.items():
            lines.append(f"  {k:12s} {mu:9.4f} +/- {sd:.4f}")
        return "\n".join(lines)


def recovered_params(img):
    return facegen.invert_params(img)


def mask_accuracy(img, mask_cond, p_hat=None):
    """Per-pixel agreement between the inverted face's mask and the condition."""
    p_hat = p_hat if p_hat is not None else facegen.invert_params(img)
    pred = facegen.class_mask(p_hat, img.shape[0])
    return float((pred == mask_cond).mean())


def attr_accuracy(img, attr_cond, p_hat=None):
    p_hat = p_hat if p_hat is not None else facegen.invert_params(img)
    bits = facegen.attributes(p_hat, img.shape[0])
    return float((bits == np.asarray(attr_cond)).mean())


def sketch_f1(img, sketch_cond):
    """F1 of thresholded Sobel edges vs the condition, 1-pixel dilation slack."""
    pred = facegen.sketch_from_image(img).astype(bool)
    cond = np.asarray(sketch_cond).astype(bool)
    if not pred.any() or not cond.any():
        return 1.0 if pred.sum() == cond.sum() else 0.0
    dil_cond = _dilate(cond)
    dil_pred = _dilate(pred)
    tp_p = (pred & dil_cond).sum()          # predicted edges near a true edge
    tp_c = (cond & dil_pred).sum()          # true edges near a predicted edge
    precision = tp_p / pred.sum()
    recall = tp_c / cond.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def _dilate(mask):
    p = np.pad(mask, 1)
    out = np.zeros_like(mask)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= p[1 + dy:1 + dy + mask.shape[0],
                     1 + dx:1 + dx + mask.shape[1]]
    return out


def lowres_psnr(img, lr_cond):
    """PSNR (dB) of the 4x4 block mean against the condition, on [-1, 1]."""
    pred = facegen.lowres_from_image(img)
    mse = float(((pred - np.asarray(lr_cond)) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(4.0 / mse))


def oracle_features(img, p_hat=None):
    """12+-dim feature: normalized recovered params, mean intensity, edge
    density."""
    S = img.shape[0]
    p_hat = p_hat if p_hat is not None else facegen.invert_params(img)
    return np.concatenate([
        p_hat.normalized(S),
        [float(img.mean())],
        [float(facegen.sketch_from_image(img).mean())],
    ])


def pfd(feats_a, feats_b):
    """Fréchet distance between Gaussian fits of two feature sets.

    d^2 = |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the matrix
    square root via symmetric eigendecomposition of Sa^(1/2) Sb Sa^(1/2).
    Returns (d2, ridged_flag).
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    mu_a, mu_b = a.mean(0), b.mean(0)
    sa = np.cov(a, rowvar=False)
    sb = np.cov(b, rowvar=False)
    ridged = False
    for _ in range(2):
        try:
            cross = _sqrtm_product_trace(sa, sb)
            break
        except np.linalg.LinAlgError:
            sa = sa + 1e-6 * np.eye(sa.shape[0])
            sb = sb + 1e-6 * np.eye(sb.shape[0])
            ridged = True
    d2 = float(((mu_a - mu_b) ** 2).sum() + np.trace(sa) + np.trace(sb)
               - 2.0 * cross)
    return max(d2, 0.0), ridged


def _psd_sqrt(s):
    vals, vecs = np.linalg.eigh(s)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _sqrtm_product_trace(sa, sb):
    """Tr((Sa Sb)^(1/2)) via eigh of the symmetrized product."""
    ra = _psd_sqrt(sa)
    inner = ra @ sb @ ra
    vals = np.linalg.eigvalsh(inner)
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def image_set_pfd(imgs_a, imgs_b):
    fa = np.stack([oracle_features(i) for i in imgs_a])
    fb = np.stack([oracle_features(i) for i in imgs_b])
    return pfd(fa, fb)


def evaluate_images(imgs, conds, variant="unknown"):
    """Alignment metrics of generated images against their conditions.

    conds: list of ConditionSet, parallel to imgs. Metrics are computed for
    whichever modalities each condition set contains.
    """
    acc = {"mask_acc": [], "attr_acc": [], "sketch_f1": [], "lowres_psnr": []}
    for img, cs in zip(imgs, conds):
        p_hat = facegen.invert_params(img)
        if Modality.MASK in cs:
            acc["mask_acc"].append(mask_accuracy(img, cs[Modality.MASK], p_hat))
        if Modality.ATTR in cs:
            acc["attr_acc"].append(attr_accuracy(img, cs[Modality.ATTR], p_hat))
        if Modality.SKETCH in cs:
            acc["sketch_f1"].append(sketch_f1(img, cs[Modality.SKETCH]))
        if Modality.LOWRES in cs:
            acc["lowres_psnr"].append(lowres_psnr(img, cs[Modality.LOWRES]))
    metrics = {k: (float(np.mean(v)), float(np.std(v)))
               for k, v in acc.items() if v}
    return EvalReport(variant, len(imgs), metrics)


def write_report_csv(path, reports):
    rows = [r.row() for r in reports]
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
