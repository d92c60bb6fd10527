import numpy as np
import pytest

from facediff import facegen
from facediff.facegen import ConditionSet, FaceParams, Modality


def test_sample_params_deterministic_in_seed():
    assert facegen.sample_params(0) == facegen.sample_params(0)
    assert facegen.sample_params(0) != facegen.sample_params(1)


def test_sample_params_ranges_and_rejection_rate():
    n = 10_000
    mins = {k: np.inf for k in facegen.FIELD_NAMES}
    maxs = {k: -np.inf for k in facegen.FIELD_NAMES}
    draws = 0
    rng = np.random.default_rng(0)
    for _ in range(n):
        while True:
            draws += 1
            vals = {k: float(rng.uniform(*facegen.field_range(k, 16)))
                    for k in facegen.FIELD_NAMES}
            p = FaceParams(**vals)
            if facegen.geometry_ok(p, 16):
                break
        for k in facegen.FIELD_NAMES:
            lo, hi = facegen.field_range(k, 16)
            v = getattr(p, k)
            assert lo <= v <= hi
            mins[k] = min(mins[k], v)
            maxs[k] = max(maxs[k], v)
    rejection = 1.0 - n / draws
    assert rejection < 0.5
    # measured ~0.03 with the reference geometry; frozen as a regression band
    assert rejection < 0.10
    for k in facegen.FIELD_NAMES:
        lo, hi = facegen.field_range(k, 16)
        assert mins[k] - lo < 0.1 * (hi - lo)
        assert hi - maxs[k] < 0.1 * (hi - lo)


def test_render_background_corner_and_skin_center():
    p = facegen.sample_params(2)
    p = facegen._replace(p, "g_bg", 0.0)
    p = facegen._replace(p, "hair_h", facegen.field_range("hair_h", 16)[0])
    img = facegen.render(p)
    # far corner: outside disc and below the minimal hair band
    assert img[15, 0] == pytest.approx(-1.0)
    cy, cx = int(p.cy), int(p.cx)
    mask = facegen.class_mask(p)
    if mask[cy, cx] == 1:
        assert img[cy, cx] == pytest.approx(2 * p.g_skin - 1, abs=1e-12)


def test_render_mean_monotone_in_skin_intensity():
    p = facegen.sample_params(7)
    means = []
    for g in np.linspace(0.35, 0.85, 5):
        means.append(facegen.render(facegen._replace(p, "g_skin", float(g))).mean())
    assert np.all(np.diff(means) > 0)


def test_attr_definitions():
    p = facegen.sample_params(1)
    p = facegen._replace(p, "kappa", 0.5)
    assert facegen.attributes(p)[0] == 1
    p = facegen._replace(p, "kappa", 0.1)
    assert facegen.attributes(p)[0] == 0


def test_sketch_all_zero_for_constant_image():
    assert np.all(facegen.sketch_from_image(np.full((16, 16), 0.2)) == 0)


def test_condition_payload_contracts():
    p = facegen.sample_params(11)
    cs = facegen.derive_conditions(p)
    assert cs[Modality.MASK].shape == (16, 16)
    assert set(np.unique(cs[Modality.MASK])) <= {0, 1, 2, 3, 4}
    assert cs[Modality.ATTR].shape == (6,)
    assert set(np.unique(cs[Modality.ATTR])) <= {0, 1}
    assert cs[Modality.SKETCH].shape == (16, 16)
    assert set(np.unique(cs[Modality.SKETCH])) <= {0, 1}
    assert cs[Modality.LOWRES].shape == (4, 4)
    assert np.abs(cs[Modality.LOWRES]).max() <= 1.0


def test_mask_histogram_pinned_for_known_seed():
    cs = facegen.derive_conditions(facegen.sample_params(42))
    counts = np.bincount(cs[Modality.MASK].ravel(), minlength=5)
    # golden values from the reference geometry at seed 42
    assert counts.sum() == 256
    expected = _GOLDEN_MASK_COUNTS
    assert list(counts) == expected


# pinned from the reference render (see test body); regenerate only on an
# intentional geometry change
_GOLDEN_MASK_COUNTS = [107, 96, 1, 8, 44]


def test_mask_render_consistency_on_skin():
    # interior skin only: rendering supersamples, so boundary pixels blend
    p = facegen.sample_params(3)
    img = facegen.render(p)
    skin = facegen.class_mask(p) == 1
    pad = np.pad(skin, 1)
    interior = skin.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            interior &= pad[1 + dy:17 + dy, 1 + dx:17 + dx]
    assert interior.any()
    assert np.all(np.abs(img[interior] - (2 * p.g_skin - 1)) <= 1e-12)


def test_lattice_roundtrip_exact_for_identifiable_point():
    # lattice point chosen so every feature is visible (hair band not hidden,
    # g_hair != g_bg, mouth and eyes well separated)
    vals = {}
    for name, idx in [("cx", 2), ("cy", 2), ("r", 2), ("eye_dx", 1),
                      ("eye_r", 2), ("mouth_w", 1), ("kappa", 3),
                      ("hair_h", 2), ("g_skin", 3), ("g_hair", 1),
                      ("g_bg", 0)]:
        vals[name] = float(facegen.lattice_values(name, 16)[idx])
    p = FaceParams(**vals)
    assert facegen.geometry_ok(p, 16)
    p_hat = facegen.invert_params(facegen.render(p))
    assert np.array_equal(p.as_array(), p_hat.as_array())


def test_invert_error_bounded_in_refinement_steps():
    # bound measured over 100 seeds with the reference inverter, then frozen;
    # errors are in units of the finest lattice step per field
    bounds = _PINNED_INVERT_BOUNDS
    for seed in range(30):
        p = facegen.sample_params(seed)
        p_hat = facegen.invert_params(facegen.render(p))
        for name in facegen.FIELD_NAMES:
            err = abs(getattr(p, name) - getattr(p_hat, name))
            assert err <= bounds[name] * facegen.refine_step(name, 16), name


_PINNED_INVERT_BOUNDS = {
    "cx": 6, "cy": 6, "r": 9, "eye_dx": 24, "eye_r": 20, "mouth_w": 22,
    "kappa": 55, "hair_h": 50, "g_skin": 5, "g_hair": 4, "g_bg": 4,
}


def test_invert_on_noise_returns_valid_params():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((16, 16))
    p_hat = facegen.invert_params(img)
    assert facegen.geometry_ok(p_hat, 16)
    assert facegen._residual(img, 16, p_hat) > 50.0


def test_attr_bits_recovered_from_renders():
    ok = 0
    n = 60
    for seed in range(n):
        p = facegen.sample_params(seed)
        p_hat = facegen.invert_params(facegen.render(p))
        ok += int((facegen.attributes(p) == facegen.attributes(p_hat)).sum())
    assert ok / (6 * n) >= 0.93   # 0.953 over 200 seeds at pinning time


def test_pgm_roundtrip(tmp_path):
    img = facegen.render(facegen.sample_params(5))
    u8 = facegen.image_to_u8(img)
    path = tmp_path / "img.pgm"
    facegen.write_pgm(path, u8)
    assert np.array_equal(facegen.read_pgm(path), u8)
    back = facegen.u8_to_image(u8)
    assert np.abs(back - img).max() <= 1.0 / 127.5


def test_export_samples_layout(tmp_path):
    facegen.export_samples(tmp_path, seed=0, count=2)
    names = sorted(f.name for f in tmp_path.iterdir())
    assert "attrs.csv" in names
    for stem in ("img", "mask", "sketch", "lowres"):
        assert f"{stem}_00000.pgm" in names
        assert f"{stem}_00001.pgm" in names
    mask = facegen.read_pgm(tmp_path / "mask_00000.pgm")
    assert mask.max() <= 4
