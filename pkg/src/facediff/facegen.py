"""Procedural parametric faces: rendering, condition derivation, oracle inversion.

Everything downstream of FaceParams is deterministic, so ground truth for
every conditioning modality and every evaluation metric is exact.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, fields as dc_fields
from enum import IntEnum

import numpy as np

from . import kernels

SKETCH_THRESHOLD = 0.25
ATTR_NAMES = ("smiling", "wide_face", "big_eyes", "long_hair",
              "bright_skin", "wide_mouth")


class Modality(IntEnum):
    MASK = 0
    ATTR = 1
    SKETCH = 2
    LOWRES = 3


ALL_MODALITIES = (Modality.MASK, Modality.ATTR, Modality.SKETCH, Modality.LOWRES)
M = len(ALL_MODALITIES)

# per-field ranges; geometric fields are fractions of the image side S,
# intensity fields are absolute
RANGES = {
    "cx": (0.38, 0.62),
    "cy": (0.38, 0.62),
    "r": (0.25, 0.38),
    "eye_dx": (0.08, 0.16),
    "eye_r": (0.03, 0.08),
    "mouth_w": (0.10, 0.20),
    "kappa": (-1.0, 1.0),
    "hair_h": (0.05, 0.25),
    "g_skin": (0.35, 0.85),
    "g_hair": (0.05, 0.45),
    "g_bg": (0.0, 0.25),
}
GEOM_FIELDS = ("cx", "cy", "r", "eye_dx", "eye_r", "mouth_w", "hair_h")
FIELD_NAMES = tuple(RANGES)


@dataclass(frozen=True)
class FaceParams:
    """Generative parameters; lengths in pixels, intensities in [0, 1]."""

    cx: float
    cy: float
    r: float
    eye_dx: float
    eye_r: float
    mouth_w: float
    kappa: float
    hair_h: float
    g_skin: float
    g_hair: float
    g_bg: float

    def as_array(self):
        return np.array([getattr(self, f.name) for f in dc_fields(self)])

    def normalized(self, S):
        """Each field mapped to [0, 1] by its range."""
        out = []
        for name in FIELD_NAMES:
            lo, hi = field_range(name, S)
            out.append((getattr(self, name) - lo) / (hi - lo))
        return np.array(out)


@dataclass
class ConditionSet:
    """Payloads for a subset of modalities; missing key = inactive."""

    payloads: dict

    @property
    def active(self):
        return tuple(sorted(self.payloads, key=int))

    def __contains__(self, m):
        return m in self.payloads

    def __getitem__(self, m):
        return self.payloads[m]

    @classmethod
    def empty(cls):
        return cls({})


def field_range(name, S):
    lo, hi = RANGES[name]
    if name in GEOM_FIELDS:
        return lo * S, hi * S
    return lo, hi


def geometry_ok(p, S):
    """Eyes and mouth strictly inside the face disc."""
    ey_off = kernels.EYE_Y_OFF * p.r
    if math.hypot(p.eye_dx, ey_off) + p.eye_r >= p.r:
        return False
    mouth_reach = (kernels.MOUTH_Y_OFF + 0.5 * kernels.MOUTH_AMP) * p.r \
        + kernels.MOUTH_THICK * S
    if math.hypot(p.mouth_w, mouth_reach) >= p.r:
        return False
    return True


def sample_params(seed, S=16, rng=None):
    """Uniform over ranges, rejection-resampled until geometry_ok."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    for _ in range(1000):
        vals = {}
        for name in FIELD_NAMES:
            lo, hi = field_range(name, S)
            vals[name] = float(rng.uniform(lo, hi))
        p = FaceParams(**vals)
        if geometry_ok(p, S):
            return p
    raise RuntimeError("rejection sampling failed after 1000 tries")


def _geom_args(p):
    return (p.cx, p.cy, p.r, p.eye_dx, p.eye_r, p.mouth_w, p.kappa, p.hair_h)


def render(p, S=16):
    """S x S grayscale image in [-1, 1], 2x2 supersampled painter's pass."""
    if S not in (16, 32):
        raise ValueError(f"unsupported side {S}")
    return kernels.render_image(S, *_geom_args(p), p.g_skin, p.g_hair, p.g_bg)


def class_mask(p, S=16):
    return kernels.class_map(S, *_geom_args(p))


def attributes(p, S=16):
    """6 binary attributes derived from thresholds on FaceParams."""
    return np.array([
        p.kappa > 0.2,
        p.r >= 0.315 * S,
        p.eye_r >= 0.055 * S,
        p.hair_h >= 0.15 * S,
        p.g_skin >= 0.6,
        p.mouth_w >= 0.15 * S,
    ], dtype=np.int64)


def sketch_from_image(img):
    return (kernels.sobel_magnitude(img) > SKETCH_THRESHOLD).astype(np.int64)


def lowres_from_image(img):
    S = img.shape[0]
    return img.reshape(S // 4, 4, S // 4, 4).mean(axis=(1, 3))


def derive_conditions(p, S=16):
    """Full ConditionSet with all four payloads."""
    img = render(p, S)
    return ConditionSet({
        Modality.MASK: class_mask(p, S),
        Modality.ATTR: attributes(p, S),
        Modality.SKETCH: sketch_from_image(img),
        Modality.LOWRES: lowres_from_image(img),
    })


# ---------------------------------------------------------------------------
# Oracle inversion: coordinate descent over a coarse-to-fine value lattice.

# fields ordered by visual impact; large-scale structure first
_SEARCH_ORDER = ("cx", "cy", "r", "g_bg", "g_skin", "hair_h", "g_hair",
                 "eye_dx", "eye_r", "mouth_w", "kappa")
LATTICE_POINTS = 5
REFINE_LEVELS = 2
_MAX_SWEEPS = 6


def lattice_values(name, S, level=0, center=None):
    """Candidate values for one field at the given refinement level."""
    lo, hi = field_range(name, S)
    if level == 0:
        return np.linspace(lo, hi, LATTICE_POINTS)
    step0 = (hi - lo) / (LATTICE_POINTS - 1)
    s = step0 / (4 ** level)
    vals = center + s * np.arange(-2, 3)
    return np.clip(vals, lo, hi)


def refine_step(name, S):
    """Finest lattice spacing for a field (error unit for the inverter)."""
    lo, hi = field_range(name, S)
    return (hi - lo) / (LATTICE_POINTS - 1) / (4 ** REFINE_LEVELS)


def _initial_guess(S):
    vals = {n: 0.5 * (field_range(n, S)[0] + field_range(n, S)[1])
            for n in FIELD_NAMES}
    return FaceParams(**vals)


def invert_params(img, S=None):
    """Best-fit FaceParams by pixel L2 over the search lattice.

    Joint coarse search over face placement (cx, cy, r) seeds a per-field
    coordinate descent, run coarse-to-fine over two refinement levels and
    repeated once to escape placement-induced basins. Total: always returns
    a geometry-valid candidate, even for pure noise.
    """
    S = S if S is not None else img.shape[0]
    img = np.ascontiguousarray(img, dtype=np.float64)
    cur = _initial_guess(S)
    cur_res = _residual(img, S, cur)
    for vcx in lattice_values("cx", S):
        for vcy in lattice_values("cy", S):
            for vr in lattice_values("r", S):
                cand = FaceParams(**{**_field_dict(cur), "cx": float(vcx),
                                     "cy": float(vcy), "r": float(vr)})
                if not geometry_ok(cand, S):
                    continue
                res = _residual(img, S, cand)
                if res < cur_res:
                    cur, cur_res = cand, res
    for _ in range(2):
        for level in range(REFINE_LEVELS + 1):
            for _ in range(_MAX_SWEEPS):
                changed = False
                for name in _SEARCH_ORDER:
                    center = getattr(cur, name)
                    for v in lattice_values(name, S, level, center):
                        if v == center:
                            continue
                        cand = _replace(cur, name, float(v))
                        if not geometry_ok(cand, S):
                            continue
                        res = _residual(img, S, cand)
                        if res < cur_res:
                            cur, cur_res = cand, res
                            changed = True
                if not changed:
                    break
    return cur


def _field_dict(p):
    return {f.name: getattr(p, f.name) for f in dc_fields(p)}


def _replace(p, name, value):
    vals = {f.name: getattr(p, f.name) for f in dc_fields(p)}
    vals[name] = value
    return FaceParams(**vals)


def _residual(img, S, p):
    return kernels.render_residual(img, S, *_geom_args(p),
                                   p.g_skin, p.g_hair, p.g_bg)


# ---------------------------------------------------------------------------
# PGM export/import (binary P5).

def write_pgm(path, values):
    """uint8 S x S array to binary PGM."""
    arr = np.asarray(values)
    if arr.dtype != np.uint8:
        raise ValueError(f"write_pgm expects uint8, got {arr.dtype}")
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def image_to_u8(img):
    """[-1, 1] float image to the PGM byte mapping round((v+1)*127.5)."""
    return np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)


def u8_to_image(arr):
    return arr.astype(np.float64) / 127.5 - 1.0


def export_samples(out_dir, seed, count, S=16):
    """Render `count` faces from consecutive seeds and write all payloads."""
    os.makedirs(out_dir, exist_ok=True)
    attr_rows = []
    for i in range(count):
        p = sample_params(seed + i, S)
        img = render(p, S)
        cs = derive_conditions(p, S)
        tag = f"{i:05d}"
        write_pgm(os.path.join(out_dir, f"img_{tag}.pgm"), image_to_u8(img))
        write_pgm(os.path.join(out_dir, f"mask_{tag}.pgm"),
                  cs[Modality.MASK].astype(np.uint8))
        write_pgm(os.path.join(out_dir, f"sketch_{tag}.pgm"),
                  (cs[Modality.SKETCH] * 255).astype(np.uint8))
        write_pgm(os.path.join(out_dir, f"lowres_{tag}.pgm"),
                  image_to_u8(cs[Modality.LOWRES]))
        attr_rows.append([tag] + cs[Modality.ATTR].tolist())
    with open(os.path.join(out_dir, "attrs.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample"] + list(ATTR_NAMES))
        w.writerows(attr_rows)
