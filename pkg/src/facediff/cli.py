"""Command-line entry point: data export, training, sampling, evaluation,
ablation batches, and the verification suites.

Exit codes: 0 success, 1 usage/config error, 2 verification failure,
3 runtime numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import sys

import numpy as np

from . import analytic, evalkit, facegen, numerics as nm, trainer
from .denoiser import Denoiser, DenoiserConfig, MICRO
from .diffusion import (GuidanceMode, GuidanceSpec, NoiseSchedule, sample,
                        write_sample_sidecar)
from .facegen import ALL_MODALITIES, ConditionSet, Modality

_SCHEMA = {
    "data": {"S", "seed"},
    "model": {"width", "blocks", "d", "K"},
    "schedule": {"T", "beta_start", "beta_end"},
    "train": {"variant", "iters", "batch", "lr", "p_uncond", "fp64",
              "uni_modality"},
    "sample": {"mode", "w", "w_m", "count", "seed"},
    "paths": {"out_dir"},
}


class ConfigError(ValueError):
    pass


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read(path)
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    return cp


def _get(cp, section, key, cast, default):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        if raw == "":
            return default
        if cast is bool:
            return raw.lower() in ("1", "true", "yes")
        return cast(raw)
    return default


def train_config_from(cp):
    model = DenoiserConfig(
        S=_get(cp, "data", "S", int, 16),
        width=_get(cp, "model", "width", int, 128),
        blocks=_get(cp, "model", "blocks", int, 4),
        d=_get(cp, "model", "d", int, 64),
        K=_get(cp, "model", "K", int, 3),
    )
    return trainer.TrainConfig(
        variant=_get(cp, "train", "variant", str, "M3_FULL"),
        iters=_get(cp, "train", "iters", int, 10_000),
        batch=_get(cp, "train", "batch", int, 32),
        lr=_get(cp, "train", "lr", float, 1e-4),
        p_uncond=_get(cp, "train", "p_uncond", float, 0.1),
        seed=_get(cp, "data", "seed", int, 0),
        fp64=_get(cp, "train", "fp64", bool, True),
        uni_modality=_get(cp, "train", "uni_modality", str, None),
        model=model,
        T=_get(cp, "schedule", "T", int, 200),
        beta_start=_get(cp, "schedule", "beta_start", float, 1e-4),
        beta_end=_get(cp, "schedule", "beta_end", float, None),
    )


def write_resolved_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["data"] = {"S": str(cfg.model.S), "seed": str(cfg.seed)}
    cp["model"] = {"width": str(cfg.model.width),
                   "blocks": str(cfg.model.blocks),
                   "d": str(cfg.model.d), "K": str(cfg.model.K)}
    cp["schedule"] = {"T": str(cfg.T), "beta_start": str(cfg.beta_start),
                      "beta_end": "" if cfg.beta_end is None
                      else str(cfg.beta_end)}
    cp["train"] = {"variant": cfg.variant, "iters": str(cfg.iters),
                   "batch": str(cfg.batch), "lr": str(cfg.lr),
                   "p_uncond": str(cfg.p_uncond), "fp64": str(cfg.fp64)}
    if cfg.uni_modality:
        cp["train"]["uni_modality"] = cfg.uni_modality
    with open(os.path.join(out_dir, "resolved_config.ini"), "w") as f:
        cp.write(f)


# ---------------------------------------------------------------------------
# condition parsing for `sample` / `eval`

def parse_cond_arg(arg, S):
    """'mask=eval_seed:3,attr=file:a.csv' -> ConditionSet."""
    cs = {}
    if not arg:
        return ConditionSet(cs)
    for part in arg.split(","):
        if "=" not in part:
            raise ConfigError(f"bad condition spec {part!r}")
        name, src = part.split("=", 1)
        try:
            m = Modality[name.strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown modality {name!r}") from None
        if src.startswith("eval_seed:"):
            p = facegen.sample_params(int(src.split(":", 1)[1]), S)
            cs[m] = facegen.derive_conditions(p, S)[m]
        elif src.startswith("file:"):
            cs[m] = _load_cond_file(m, src.split(":", 1)[1], S)
        else:
            raise ConfigError(f"condition source {src!r} must be "
                              "eval_seed:<n> or file:<path>")
    return ConditionSet(cs)


def _load_cond_file(m, path, S):
    if m == Modality.ATTR:
        with open(path) as f:
            bits = [int(v) for v in f.read().replace(",", " ").split()]
        return np.array(bits[:6], dtype=np.int64)
    arr = facegen.read_pgm(path)
    if m == Modality.MASK:
        return arr.astype(np.int64)
    if m == Modality.SKETCH:
        return (arr > 127).astype(np.int64)
    return facegen.u8_to_image(arr)


# ---------------------------------------------------------------------------
# eval protocol

def eval_checkpoint(models, spec, cfg_model_S, T_sched, protocol, n, seed,
                    variant="ckpt"):
    """Generate n images under the protocol's conditions and score them."""
    if protocol.startswith("uni:"):
        active = [Modality[protocol[4:].upper()]]
    elif protocol.startswith("multi:"):
        names = protocol[6:]
        if names == "all":
            active = list(ALL_MODALITIES)
        else:
            active = [Modality[x.upper()] for x in names.split("+")]
    else:
        raise ConfigError(f"bad protocol {protocol!r}")
    imgs, conds = [], []
    for i in range(n):
        p = facegen.sample_params(seed + i, cfg_model_S)
        full = facegen.derive_conditions(p, cfg_model_S)
        cs = ConditionSet({m: full[m] for m in active})
        use_spec = spec
        if spec.mode in (GuidanceMode.PER_MODALITY, GuidanceMode.PARALLEL) \
                and len(spec.w_m) != len(active):
            use_spec = GuidanceSpec(spec.mode, w_m=(spec.w_m or (1.0,))[:1]
                                    * len(active))
        img = sample(models, cs, use_spec, T_sched, seed=seed + i, n=1)[0]
        imgs.append(img)
        conds.append(cs)
    return evalkit.evaluate_images(imgs, conds, variant)


def load_models_for_sampling(ckpt, parallel_dir=None):
    models = {}
    if parallel_dir is not None:
        for m in ALL_MODALITIES:
            sub = os.path.join(parallel_dir, m.name.lower(), "ckpt_final")
            if os.path.isdir(sub):
                models[m] = trainer.load_model(sub)
        if not models:
            raise ConfigError(f"no per-modality checkpoints under {parallel_dir}")
    if ckpt is not None:
        models[None] = trainer.load_model(ckpt)
    if not models:
        raise ConfigError("need --ckpt or --parallel")
    return models


# ---------------------------------------------------------------------------
# subcommands

def cmd_datagen(args):
    cp = load_config(args.config)
    S = _get(cp, "data", "S", int, 16)
    seed = _get(cp, "data", "seed", int, 0)
    facegen.export_samples(args.export, seed, args.count, S)
    print(f"wrote {args.count} samples to {args.export}")
    return 0


def cmd_train(args):
    cp = load_config(args.config)
    cfg = train_config_from(cp)
    out_dir = args.out or _get(cp, "paths", "out_dir", str, "runs/train")
    write_resolved_config(cfg, out_dir)
    if cfg.variant == "PARALLEL":
        trainer.train_parallel_baseline(cfg, out_dir)
    else:
        final = trainer.run(cfg, out_dir, resume_from=args.resume)
        print(f"final checkpoint: {final}")
    return 0


def cmd_sample(args):
    models = load_models_for_sampling(args.ckpt, args.parallel)
    some = next(iter(models.values()))
    S = some.cfg.S
    cs = parse_cond_arg(args.cond, S)
    mode = GuidanceMode(args.mode)
    if mode == GuidanceMode.SCALAR:
        spec = GuidanceSpec(mode, w=args.w)
    elif mode in (GuidanceMode.PER_MODALITY, GuidanceMode.PARALLEL):
        w_m = tuple(float(x) for x in args.wm.split("+")) if args.wm \
            else (1.0,) * len(cs.active)
        spec = GuidanceSpec(mode, w_m=w_m)
    else:
        spec = GuidanceSpec(mode)
    sched = NoiseSchedule.linear(args.T)
    imgs = sample(models, cs, spec, sched, seed=args.seed, n=args.count)
    os.makedirs(args.out, exist_ok=True)
    files = []
    for i, img in enumerate(imgs):
        fn = f"sample_{i:04d}.pgm"
        facegen.write_pgm(os.path.join(args.out, fn),
                          facegen.image_to_u8(img))
        files.append(fn)
    write_sample_sidecar(os.path.join(args.out, "samples.csv"),
                         args.seed, cs, spec, files)
    print(f"wrote {len(files)} samples to {args.out}")
    return 0


def cmd_eval(args):
    models = load_models_for_sampling(args.ckpt, args.parallel)
    some = next(iter(models.values()))
    if args.parallel:
        spec = GuidanceSpec(GuidanceMode.PARALLEL, w_m=(1.0,))
    else:
        spec = GuidanceSpec(GuidanceMode.NONE)
    sched = NoiseSchedule.linear(args.T)
    report = eval_checkpoint(models, spec, some.cfg.S, sched, args.protocol,
                             args.n, args.seed,
                             variant=args.ckpt or args.parallel)
    print(report)
    if args.out:
        evalkit.write_report_csv(args.out, [report])
    return 0


ABLATION_VARIANTS = ("M1_PARALLEL", "M2_DECOR_ONLY", "M3_FULL",
                     "M5_MULTI_SURR", "M6_FULL_EAM")


def run_ablation(base_cfg, out_dir, n_eval=50, eval_seed=10_000):
    """Train and evaluate the ablation matrix; returns EvalReports per row."""
    sched = base_cfg.schedule()
    reports = []
    for variant in ABLATION_VARIANTS:
        vdir = os.path.join(out_dir, variant.lower())
        if variant == "M1_PARALLEL":
            trainer.train_parallel_baseline(base_cfg, vdir)
            models = load_models_for_sampling(None, vdir)
            spec = GuidanceSpec(GuidanceMode.PARALLEL, w_m=(1.0,))
        else:
            cfg = dataclasses.replace(base_cfg, variant=variant)
            final = trainer.run(cfg, vdir)
            models = {None: trainer.load_model(final)}
            spec = GuidanceSpec(GuidanceMode.NONE)
        for protocol in ("multi:all", "uni:attr"):
            rep = eval_checkpoint(models, spec, base_cfg.model.S, sched,
                                  protocol, n_eval, eval_seed,
                                  variant=f"{variant}:{protocol}")
            reports.append(rep)
    return reports


def cmd_ablate(args):
    path = args.configs
    if os.path.isdir(path):
        path = os.path.join(path, "base.ini")
    cp = load_config(path)
    cfg = train_config_from(cp)
    os.makedirs(args.out, exist_ok=True)
    write_resolved_config(cfg, args.out)
    reports = run_ablation(cfg, args.out, n_eval=args.n)
    out_csv = os.path.join(args.out, "ablation.csv")
    evalkit.write_report_csv(out_csv, reports)
    for r in reports:
        print(r)
    print(f"wrote {out_csv}")
    return 0


def cmd_gradcheck(args):
    from .diffusion import denoise_loss

    sched = NoiseSchedule.linear(50)
    model = Denoiser(MICRO, seed=3)
    p = facegen.sample_params(5)
    full = facegen.derive_conditions(p)
    cs = ConditionSet({Modality.MASK: full[Modality.MASK]})
    x0 = facegen.render(p)
    eps = np.random.default_rng(0).standard_normal((16, 16))

    def loss_fn(store):
        return denoise_loss(model, [(x0, cs, 7, eps)], sched)

    err = nm.grad_check(loss_fn, model.store, h=1e-5, n_probe=args.probes,
                        rng=np.random.default_rng(1))
    print(f"max relative error over {args.probes} probes: {err:.3e}")
    if err >= 1e-4:
        print("FAIL: gradient check above 1e-4")
        return 2
    print("PASS")
    return 0


def cmd_oracle_check(args):
    sched = NoiseSchedule.linear(200)
    gm = analytic.GaussianMixture1D((0.5, 0.5), (-2.0, 2.0), (0.3, 0.3))
    try:
        report = analytic.verify_cfg_reduction(gm, sched, n_chains=args.chains)
    except AssertionError as e:
        print(f"FAIL: {e}")
        return 2
    xs = analytic.reverse_chains(gm, sched, args.chains, seed=0)
    fracs = analytic.component_fractions(gm, xs)
    print(f"scalar == per-modality: {report['scalar_equals_per_modality']}")
    print(f"w=0 identity:           {report['w0_identity']}")
    print(f"conditional mean/std:   {report['conditional_mean']:.4f} / "
          f"{report['conditional_std']:.4f}")
    print(f"unconditional fractions: {fracs}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("stat,value\n")
            for k, v in report.items():
                f.write(f"{k},{v}\n")
            f.write(f"frac_0,{fracs[0]}\nfrac_1,{fracs[1]}\n")
    if np.abs(fracs - 0.5).max() > 0.03:
        print("FAIL: component weights off by more than 0.03")
        return 2
    print("PASS")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="facediff")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("datagen", help="export rendered faces and conditions")
    p.add_argument("--config", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--export", required=True)
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--resume")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample images from a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--parallel", help="directory of per-modality checkpoints")
    p.add_argument("--cond", default="",
                   help="e.g. mask=eval_seed:3,attr=file:bits.csv")
    p.add_argument("--mode", default="none",
                   choices=[m.value for m in GuidanceMode])
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--wm", help="per-modality weights, e.g. 1.0+0.5")
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="alignment metrics for a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--parallel")
    p.add_argument("--protocol", required=True,
                   help="uni:<modality> or multi:<m1+m2|all>")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--seed", type=int, default=10_000)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train + evaluate the ablation matrix")
    p.add_argument("--configs", required=True,
                   help="base config file or directory containing base.ini")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=50)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--probes", type=int, default=64)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="analytic sampler verification")
    p.add_argument("--chains", type=int, default=5000)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle_check)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except nm.NonFiniteError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
