"""Hot rasterization kernels: numba @njit loops with a pure-numpy fallback.

Set FACEDIFF_NO_NUMBA=1 to force the numpy path (e.g. for debugging or on
machines without a working numba). Both paths are tested for exact agreement;
benchmarks/bench_kernels.py compares their throughput.

Geometry constants here are the single source of truth for the face layout;
facegen's rejection sampler and the lattice inverter import them.
"""

from __future__ import annotations

import os

import numpy as np

# face layout, in fractions of the face radius r (offsets) or of the image
# side S (mouth stroke thickness)
EYE_Y_OFF = 0.30       # eye centers sit this far above the face center
MOUTH_Y_OFF = 0.42     # mouth baseline below the face center
MOUTH_AMP = 0.20       # peak curvature displacement at |kappa| = 1
MOUTH_THICK = 0.05     # half-thickness of the mouth stroke, fraction of S
G_EYE = 0.05           # fixed eye intensity
G_MOUTH = 0.10         # fixed mouth intensity

# class indices
BG, SKIN, EYE, MOUTH, HAIR = 0, 1, 2, 3, 4

USE_NUMBA = os.environ.get("FACEDIFF_NO_NUMBA", "0") != "1"
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

_SS_OFF = (0.25, 0.75)  # 2x2 supersampling offsets within a pixel


def _point_class(px, py, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h):
    # priority: mouth > eye > skin > hair > bg (reverse painter's order)
    dx = px - cx
    if abs(dx) <= mouth_w:
        my = cy + MOUTH_Y_OFF * r
        u = dx / mouth_w
        ym = my + kappa * MOUTH_AMP * r * (0.5 - u * u)
        if abs(py - ym) <= MOUTH_THICK * S:
            return MOUTH
    ey = cy - EYE_Y_OFF * r
    dl = px - (cx - eye_dx)
    dr = px - (cx + eye_dx)
    dy = py - ey
    if dl * dl + dy * dy <= eye_r * eye_r or dr * dr + dy * dy <= eye_r * eye_r:
        return EYE
    fx = px - cx
    fy = py - cy
    if fx * fx + fy * fy <= r * r:
        return SKIN
    if py < hair_h:
        return HAIR
    return BG


def _render_loop(out, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
                 g_skin, g_hair, g_bg):
    for iy in range(S):
        for ix in range(S):
            acc = 0.0
            for oy in range(2):
                py = iy + _SS_OFF[oy]
                for ox in range(2):
                    px = ix + _SS_OFF[ox]
                    c = _point_class(px, py, S, cx, cy, r, eye_dx, eye_r,
                                     mouth_w, kappa, hair_h)
                    if c == SKIN:
                        g = g_skin
                    elif c == EYE:
                        g = G_EYE
                    elif c == MOUTH:
                        g = G_MOUTH
                    elif c == HAIR:
                        g = g_hair
                    else:
                        g = g_bg
                    acc += g
            out[iy, ix] = 2.0 * (acc * 0.25) - 1.0


def _mask_loop(out, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h):
    for iy in range(S):
        for ix in range(S):
            out[iy, ix] = _point_class(ix + 0.5, iy + 0.5, S, cx, cy, r,
                                       eye_dx, eye_r, mouth_w, kappa, hair_h)


def _residual_loop(img, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
                   g_skin, g_hair, g_bg):
    """Sum of squared differences between the rendered face and img."""
    total = 0.0
    for iy in range(S):
        for ix in range(S):
            acc = 0.0
            for oy in range(2):
                py = iy + _SS_OFF[oy]
                for ox in range(2):
                    px = ix + _SS_OFF[ox]
                    c = _point_class(px, py, S, cx, cy, r, eye_dx, eye_r,
                                     mouth_w, kappa, hair_h)
                    if c == SKIN:
                        g = g_skin
                    elif c == EYE:
                        g = G_EYE
                    elif c == MOUTH:
                        g = G_MOUTH
                    elif c == HAIR:
                        g = g_hair
                    else:
                        g = g_bg
                    acc += g
            d = (2.0 * (acc * 0.25) - 1.0) - img[iy, ix]
            total += d * d
    return total


def _class_grid_np(px, py, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h):
    """Vectorized _point_class over coordinate grids."""
    dx = px - cx
    my = cy + MOUTH_Y_OFF * r
    u = dx / mouth_w
    ym = my + kappa * MOUTH_AMP * r * (0.5 - u * u)
    is_mouth = (np.abs(dx) <= mouth_w) & (np.abs(py - ym) <= MOUTH_THICK * S)
    ey = cy - EYE_Y_OFF * r
    dy = py - ey
    is_eye = ((px - (cx - eye_dx)) ** 2 + dy ** 2 <= eye_r ** 2) | \
             ((px - (cx + eye_dx)) ** 2 + dy ** 2 <= eye_r ** 2)
    is_skin = (px - cx) ** 2 + (py - cy) ** 2 <= r ** 2
    is_hair = py < hair_h
    cls = np.zeros(px.shape, dtype=np.int64)
    cls[is_hair] = HAIR
    cls[is_skin] = SKIN
    cls[is_eye] = EYE
    cls[is_mouth] = MOUTH
    return cls


def _render_np(S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
               g_skin, g_hair, g_bg):
    off = np.array(_SS_OFF)
    xs = (np.arange(S)[:, None] + off[None, :]).ravel()   # 2S subsample coords
    px, py = np.meshgrid(xs, xs, indexing="xy")
    cls = _class_grid_np(px, py, S, cx, cy, r, eye_dx, eye_r, mouth_w,
                         kappa, hair_h)
    lut = np.array([g_bg, g_skin, G_EYE, G_MOUTH, g_hair])
    g = lut[cls].reshape(S, 2, S, 2).mean(axis=(1, 3))
    return 2.0 * g - 1.0


def _mask_np(S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h):
    xs = np.arange(S) + 0.5
    px, py = np.meshgrid(xs, xs, indexing="xy")
    return _class_grid_np(px, py, S, cx, cy, r, eye_dx, eye_r, mouth_w,
                          kappa, hair_h)


if USE_NUMBA:
    _point_class = njit(cache=True, inline="always")(_point_class)
    _render_jit = njit(cache=True)(_render_loop)
    _mask_jit = njit(cache=True)(_mask_loop)
    _residual_jit = njit(cache=True)(_residual_loop)


def render_image(S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
                 g_skin, g_hair, g_bg):
    """S x S image in [-1, 1], 2x2 supersampled."""
    if USE_NUMBA:
        out = np.empty((S, S))
        _render_jit(out, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
                    g_skin, g_hair, g_bg)
        return out
    return _render_np(S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
                      g_skin, g_hair, g_bg)


def class_map(S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h):
    """S x S integer class map sampled at pixel centers (no supersampling)."""
    if USE_NUMBA:
        out = np.empty((S, S), dtype=np.int64)
        _mask_jit(out, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h)
        return out
    return _mask_np(S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h)


def render_residual(img, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
                    g_skin, g_hair, g_bg):
    """L2 residual of render(params) against img, without materializing it."""
    if USE_NUMBA:
        return _residual_jit(img, S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa,
                             hair_h, g_skin, g_hair, g_bg)
    rec = _render_np(S, cx, cy, r, eye_dx, eye_r, mouth_w, kappa, hair_h,
                     g_skin, g_hair, g_bg)
    return float(((rec - img) ** 2).sum())


def sobel_magnitude(img):
    """Gradient magnitude with 3x3 Sobel kernels, edge-replicated borders."""
    p = np.pad(img, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]
          - p[:-2, :-2] - 2 * p[1:-1, :-2] - p[2:, :-2]) / 4.0
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]
          - p[:-2, :-2] - 2 * p[:-2, 1:-1] - p[:-2, 2:]) / 4.0
    return np.sqrt(gx * gx + gy * gy)
