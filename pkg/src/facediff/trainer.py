"""Uni-modal training with modal surrogates, ablation variants, Adam,
checkpointing and deterministic resumption.

Variant map (mirrors the ablation matrix):
  M2_DECOR_ONLY   uni-modal, surrogate decorates the active condition only
  M3_FULL         uni-modal, inactive surrogates ride along as bare tokens
  M4_MULTI_NOSURR multi-modal (all conditions), no surrogates at all
  M5_MULTI_SURR   multi-modal with surrogate decoration
  M6_FULL_EAM     M3 plus the K-head noise modulation
  UNI_SINGLE      single-modality model (building block of the parallel
                  baseline)
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import facegen, numerics as nm
from .denoiser import Denoiser, DenoiserConfig, MICRO
from .diffusion import NoiseSchedule, denoise_loss, q_sample
from .facegen import ALL_MODALITIES, ConditionSet, Modality

VARIANTS = ("M2_DECOR_ONLY", "M3_FULL", "M4_MULTI_NOSURR", "M5_MULTI_SURR",
            "M6_FULL_EAM", "UNI_SINGLE")
_MULTI_VARIANTS = ("M4_MULTI_NOSURR", "M5_MULTI_SURR")

CHECKPOINT_EVERY = 1000


@dataclass
class TrainConfig:
    variant: str = "M3_FULL"
    iters: int = 10_000
    batch: int = 32
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    p_uncond: float = 0.1
    seed: int = 0
    fp64: bool = True
    uni_modality: str | None = None     # UNI_SINGLE only
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0.0 <= self.p_uncond <= 0.5:
            raise ValueError("p_uncond outside [0, 0.5]")
        if self.variant == "UNI_SINGLE" and self.uni_modality is None:
            raise ValueError("UNI_SINGLE requires uni_modality")

    def schedule(self):
        return NoiseSchedule.linear(self.T, self.beta_start, self.beta_end)


def model_flags(cfg):
    """(modalities, decorate, inter_modal, K) implied by the variant."""
    v = cfg.variant
    modalities = ALL_MODALITIES
    decorate, inter_modal = True, True
    K = cfg.model.K if v == "M6_FULL_EAM" else 0
    if v == "M2_DECOR_ONLY":
        inter_modal = False
    elif v == "M4_MULTI_NOSURR":
        decorate = False
    elif v == "UNI_SINGLE":
        modalities = (Modality[cfg.uni_modality.upper()],)
    return modalities, decorate, inter_modal, K


def build_model(cfg):
    modalities, decorate, inter_modal, K = model_flags(cfg)
    mcfg = dataclasses.replace(cfg.model, K=K)
    return Denoiser(mcfg, seed=cfg.seed, modalities=modalities,
                    decorate=decorate, inter_modal=inter_modal)


class Adam:
    """Adam with explicit state, stepped in lexicographic parameter order."""

    def __init__(self, store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in store.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in store.items()}

    def step(self, store):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in store.items():
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            p.data -= self.lr * (self.m[name] / bc1) / (
                np.sqrt(self.v[name] / bc2) + self.eps)


@dataclass
class TrainState:
    config: TrainConfig
    model: Denoiser
    opt: Adam
    sched: NoiseSchedule
    rng: np.random.Generator
    iteration: int = 0


def init_state(cfg):
    model = build_model(cfg)
    if not cfg.fp64:
        for _, p in model.store.items():
            p.data = p.data.astype(np.float32)
            p.zero_grad()
    return TrainState(cfg, model, Adam(model.store, cfg.lr, cfg.adam_beta1,
                                       cfg.adam_beta2, cfg.adam_eps),
                      cfg.schedule(), np.random.default_rng(cfg.seed))


def _draw_sample(state, modality):
    """One (x0, cs, t, eps) tuple; modality is None for multi-modal variants."""
    cfg = state.config
    rng = state.rng
    S = cfg.model.S
    p = facegen.sample_params(None, S, rng=rng)
    full = facegen.derive_conditions(p, S)
    if rng.uniform() < cfg.p_uncond:
        cs = ConditionSet.empty()
    elif modality is None:
        cs = full
    else:
        cs = ConditionSet({modality: full[modality]})
    t = int(rng.integers(1, state.sched.T + 1))
    eps = rng.standard_normal((S, S))
    return facegen.render(p, S), cs, t, eps


def train_step(state):
    """One optimizer step; returns (loss, modality_label)."""
    cfg = state.config
    if cfg.variant in _MULTI_VARIANTS:
        modality, label = None, "multi"
    elif cfg.variant == "UNI_SINGLE":
        modality = Modality[cfg.uni_modality.upper()]
        label = modality.name.lower()
    else:
        modality = ALL_MODALITIES[int(state.rng.integers(len(ALL_MODALITIES)))]
        label = modality.name.lower()
    samples = [_draw_sample(state, modality) for _ in range(cfg.batch)]
    state.model.store.zero_grads()
    loss = denoise_loss(state.model, samples, state.sched)
    loss.backward()
    state.opt.step(state.model.store)
    state.iteration += 1
    return float(loss.data), label


def run(cfg, out_dir, resume_from=None, log_every=1):
    """Train for cfg.iters steps; returns the final checkpoint directory."""
    os.makedirs(out_dir, exist_ok=True)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        cfg = cfg if cfg is not None else state.config
        mode = "a"
    else:
        state = init_state(cfg)
        mode = "w"
    loss_csv = os.path.join(out_dir, "loss.csv")
    with open(loss_csv, mode, newline="") as f:
        if mode == "w":
            f.write("iter,loss,modality\n")
        while state.iteration < cfg.iters:
            loss, label = train_step(state)
            if state.iteration % log_every == 0 or state.iteration == cfg.iters:
                f.write(f"{state.iteration},{loss:.8f},{label}\n")
            if state.iteration % CHECKPOINT_EVERY == 0:
                save_checkpoint(os.path.join(out_dir, f"ckpt_{state.iteration:06d}"),
                                state)
    final = os.path.join(out_dir, "ckpt_final")
    save_checkpoint(final, state)
    return final


def train_parallel_baseline(cfg, out_dir):
    """Train one UNI_SINGLE model per modality; returns {Modality: ckpt dir}."""
    out = {}
    for m in ALL_MODALITIES:
        sub = dataclasses.replace(cfg, variant="UNI_SINGLE",
                                  uni_modality=m.name.lower())
        out[m] = run(sub, os.path.join(out_dir, m.name.lower()))
    return out


# ---------------------------------------------------------------------------
# Checkpoints: manifest.json + one MDLT tensor file per parameter and per
# Adam moment. Reload is bit-identical; resumed runs reproduce unbroken ones
# in 64-bit mode.

def save_checkpoint(ckpt_dir, state):
    os.makedirs(ckpt_dir, exist_ok=True)
    tensors = {}

    def dump(name, arr):
        fn = f"{name}.mdlt"
        path = os.path.join(ckpt_dir, fn)
        nm.save_tensor(path, arr)
        tensors[name] = {"file": fn, "sha256": nm.tensor_sha256(path)}

    for name, p in state.model.store.items():
        dump(name, p.data)
    for name in sorted(state.opt.m):
        dump(f"adam_m.{name}", state.opt.m[name])
        dump(f"adam_v.{name}", state.opt.v[name])
    manifest = {
        "config": dataclasses.asdict(state.config),
        "iteration": state.iteration,
        "adam_t": state.opt.t,
        "rng_state": state.rng.bit_generator.state,
        "tensors": tensors,
    }
    with open(os.path.join(ckpt_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, default=int)


def load_checkpoint(ckpt_dir):
    with open(os.path.join(ckpt_dir, "manifest.json")) as f:
        manifest = json.load(f)
    raw = dict(manifest["config"])
    raw["model"] = DenoiserConfig(**raw["model"])
    cfg = TrainConfig(**raw)
    state = init_state(cfg)
    for name, meta in manifest["tensors"].items():
        path = os.path.join(ckpt_dir, meta["file"])
        if nm.tensor_sha256(path) != meta["sha256"]:
            raise ValueError(f"checkpoint tensor {name} hash mismatch")
        arr = nm.load_tensor(path)
        if name.startswith("adam_m."):
            state.opt.m[name[len("adam_m."):]] = arr
        elif name.startswith("adam_v."):
            state.opt.v[name[len("adam_v."):]] = arr
        else:
            p = state.model.store[name]
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint tensor {name} dims {arr.shape} vs "
                    f"{p.data.shape}")
            p.data = arr
            p.zero_grad()
    state.iteration = manifest["iteration"]
    state.opt.t = manifest["adam_t"]
    state.rng.bit_generator.state = manifest["rng_state"]
    return state


def load_model(ckpt_dir):
    return load_checkpoint(ckpt_dir).model
