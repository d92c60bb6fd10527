"""Noise schedule, forward corruption, ancestral sampling, and the
classifier-free-guidance composition modes (scalar, per-modality, parallel).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import numerics as nm
from .facegen import ConditionSet


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def linear(cls, T=200, beta_start=1e-4, beta_end=None):
        # default beta_end rescales the reference 1000-step value 0.02 so that
        # shorter chains still fully corrupt (alpha_bar_T stays < 0.05)
        if beta_end is None:
            beta_end = 0.02 * 1000.0 / T
        beta = np.linspace(beta_start, beta_end, T)
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        sched = cls(T, beta, alpha, alpha_bar)
        sched.validate()
        return sched

    def validate(self):
        if not (np.all(self.beta > 0) and np.all(self.beta < 1)):
            raise ValueError("beta outside (0, 1)")
        if not np.all(np.diff(self.beta) > 0):
            raise ValueError("beta not strictly increasing")
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar not strictly decreasing")
        if self.alpha_bar[-1] >= 0.05:
            raise ValueError(
                f"alpha_bar_T = {self.alpha_bar[-1]:.4f} >= 0.05; "
                "chain too short for this beta range")

    def at(self, t):
        """(beta_t, alpha_t, alpha_bar_t) for t in [1, T]."""
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return self.beta[t - 1], self.alpha[t - 1], self.alpha_bar[t - 1]


class GuidanceMode(Enum):
    NONE = "none"
    SCALAR = "scalar"
    PER_MODALITY = "per_modality"
    PARALLEL = "parallel"


@dataclass
class GuidanceSpec:
    mode: GuidanceMode = GuidanceMode.NONE
    w: float | None = None              # SCALAR strength
    w_m: tuple = ()                     # PER_MODALITY / PARALLEL strengths

    def __post_init__(self):
        if self.w is not None and self.w < 0:
            raise ValueError("guidance strength must be >= 0")
        if any(v < 0 for v in self.w_m):
            raise ValueError("guidance strengths must be >= 0")


def q_sample(x0, t, eps, sched):
    """Forward corruption x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _, _, abar = sched.at(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def denoise_loss(model, samples, sched):
    """Mean squared error over a batch of (x0, cs, t, eps) tuples.

    Returns a scalar graph Tensor; averaged over batch and pixels.
    """
    total = None
    n_px = None
    for x0, cs, t, eps in samples:
        x_t = q_sample(x0, t, eps, sched)
        out = model.forward(x_t, t, cs, sched.T)
        target = nm.Tensor(np.asarray(eps, dtype=np.float64).reshape(-1))
        term = nm.sse(out.eps, target)
        total = term if total is None else nm.add(total, term)
        n_px = target.shape[0]
    loss = nm.scale(total, 1.0 / (len(samples) * n_px))
    nm.assert_finite(loss.data, "denoise loss")
    return loss


def ancestral_step(x_t, t, eps_hat, sched, rng):
    """DDPM reverse step with sqrt(beta_t) noise; deterministic at t = 1."""
    beta, alpha, abar = sched.at(t)
    mean = (x_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    if t == 1:
        return mean
    return mean + np.sqrt(beta) * rng.standard_normal(np.shape(x_t))


def compose_cfg(eps_conds, eps_unconds, spec):
    """Combine conditional/unconditional noise predictions per the guidance
    mode. Per-modality form: sum_m (w_m + 1) eps_cond_m - sum_m w_m eps_unc_m.
    """
    if spec.mode == GuidanceMode.NONE:
        if len(eps_conds) != 1:
            raise ValueError(f"NONE takes 1 conditional, got {len(eps_conds)}")
        return np.asarray(eps_conds[0]).copy()
    if spec.mode == GuidanceMode.SCALAR:
        if len(eps_conds) != 1 or len(eps_unconds) != 1:
            raise ValueError("SCALAR takes exactly one cond and one uncond")
        w = float(spec.w)
        return (w + 1.0) * np.asarray(eps_conds[0]) - w * np.asarray(eps_unconds[0])
    if len(eps_conds) != len(spec.w_m) or len(eps_unconds) != len(spec.w_m):
        raise ValueError(
            f"{len(eps_conds)} cond / {len(eps_unconds)} uncond maps "
            f"vs {len(spec.w_m)} weights")
    out = np.zeros_like(np.asarray(eps_conds[0], dtype=np.float64))
    for wm, ec, eu in zip(spec.w_m, eps_conds, eps_unconds):
        out += (wm + 1.0) * np.asarray(ec) - wm * np.asarray(eu)
    return out


def clip_eps_to_x0_range(x_t, t, eps_hat, sched, lo=-1.0, hi=1.0):
    """Static thresholding: clamp the implied clean image to the data range
    and return the consistent noise prediction.

    Keeps imperfect learned predictors from compounding into divergent
    chains; a no-op whenever the implied x0 is already in range.
    """
    _, _, abar = sched.at(t)
    x0 = (x_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)
    x0 = np.clip(x0, lo, hi)
    return (x_t - np.sqrt(abar) * x0) / np.sqrt(1.0 - abar)


def _eps_hat(models, x, t, cs, spec, T):
    mode = spec.mode
    if mode == GuidanceMode.NONE:
        return compose_cfg([models[None].predict_eps(x, t, cs, T)], [], spec)
    if mode == GuidanceMode.SCALAR:
        model = models[None]
        return compose_cfg([model.predict_eps(x, t, cs, T)],
                           [model.predict_eps(x, t, ConditionSet.empty(), T)],
                           spec)
    active = cs.active
    if mode == GuidanceMode.PER_MODALITY:
        model = models[None]
        uncond = model.predict_eps(x, t, ConditionSet.empty(), T)
        conds = [model.predict_eps(x, t, ConditionSet({m: cs[m]}), T)
                 for m in active]
        return compose_cfg(conds, [uncond] * len(active), spec)
    # PARALLEL: one checkpoint per active modality
    conds, unconds = [], []
    for m in active:
        conds.append(models[m].predict_eps(x, t, ConditionSet({m: cs[m]}), T))
        unconds.append(models[m].predict_eps(x, t, ConditionSet.empty(), T))
    return compose_cfg(conds, unconds, spec)


def sample(models, cs, spec, sched, seed, n=1):
    """Draw n images by ancestral sampling; deterministic in seed.

    models: dict mapping None -> unified model (NONE/SCALAR/PER_MODALITY) and/or
    Modality -> per-modality model (PARALLEL).
    """
    if spec.mode in (GuidanceMode.PER_MODALITY, GuidanceMode.PARALLEL):
        if len(spec.w_m) != len(cs.active):
            raise ValueError(
                f"{len(spec.w_m)} guidance weights for {len(cs.active)} "
                "active modalities")
    if spec.mode == GuidanceMode.PARALLEL:
        missing = [m for m in cs.active if m not in models]
        if missing:
            raise ValueError(f"PARALLEL missing checkpoints for {missing}")
    some_model = next(iter(models.values()))
    S = some_model.cfg.S
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.standard_normal((S, S))
        for t in range(sched.T, 0, -1):
            eps_hat = _eps_hat(models, x, t, cs, spec, sched.T)
            eps_hat = clip_eps_to_x0_range(x, t, eps_hat, sched)
            x = ancestral_step(x, t, eps_hat, sched, rng)
        out.append(x)
    return np.stack(out)


def write_sample_sidecar(path, seed, cs, spec, files):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["file", "seed", "active", "mode", "weights"])
        active = "+".join(m.name.lower() for m in cs.active) or "none"
        if spec.mode == GuidanceMode.SCALAR:
            weights = str(spec.w)
        else:
            weights = "+".join(str(v) for v in spec.w_m)
        for i, fn in enumerate(files):
            w.writerow([fn, seed, active, spec.mode.value, weights])
