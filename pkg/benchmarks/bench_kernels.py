"""Throughput comparison of the compiled kernels against the pure-numpy
fallback path.

Run:  python3 benchmarks/bench_kernels.py [--repeat 200]

The dispatchers in facediff.kernels honor FACEDIFF_NO_NUMBA=1, but flipping
the flag requires a fresh import, so this script times the underlying
implementations directly.
"""

import argparse
import time

import numpy as np

from facediff import facegen, kernels


def timeit(fn, repeat):
    fn()                                    # warm up (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--S", type=int, default=16)
    args = ap.parse_args()

    p = facegen.sample_params(0, args.S)
    img = facegen.render(p, args.S)
    render_args = (args.S, p.cx, p.cy, p.r, p.eye_dx, p.eye_r, p.mouth_w,
                   p.kappa, p.hair_h, p.g_skin, p.g_hair, p.g_bg)
    mask_args = render_args[:9]

    rows = []
    if kernels.USE_NUMBA:
        compiled = {
            "render": lambda: kernels.render_image(*render_args),
            "mask": lambda: kernels.class_map(*mask_args),
            "residual": lambda: kernels.render_residual(img, *render_args[:]),
        }
    else:
        compiled = None
        print("numba disabled (FACEDIFF_NO_NUMBA=1): timing fallback only")
    fallback = {
        "render": lambda: kernels._render_np(*render_args),
        "mask": lambda: kernels._mask_np(*mask_args),
        "residual": lambda: float(
            ((kernels._render_np(*render_args) - img) ** 2).sum()),
    }

    print(f"S={args.S}  repeat={args.repeat}")
    print(f"{'kernel':10s} {'numpy (us)':>12s} {'numba (us)':>12s} "
          f"{'speedup':>8s}")
    for name in fallback:
        t_np = timeit(fallback[name], args.repeat) * 1e6
        if compiled:
            t_nb = timeit(compiled[name], args.repeat) * 1e6
            print(f"{name:10s} {t_np:12.1f} {t_nb:12.1f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:10s} {t_np:12.1f} {'-':>12s} {'-':>8s}")

    # end-to-end: one oracle inversion (the hottest consumer of the kernels)
    t_inv = timeit(lambda: facegen.invert_params(img, args.S), max(3, args.repeat // 50))
    print(f"\ninvert_params: {t_inv * 1e3:.1f} ms per image "
          f"({'numba' if kernels.USE_NUMBA else 'numpy'} path)")


if __name__ == "__main__":
    main()
