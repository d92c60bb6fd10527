import numpy as np
import pytest

from facediff import analytic as an
from facediff.diffusion import NoiseSchedule


@pytest.fixture(scope="module")
def sched():
    return NoiseSchedule.linear(T=200)


@pytest.fixture(scope="module")
def gm():
    return an.GaussianMixture1D((0.5, 0.5), (-2.0, 2.0), (0.3, 0.3))


def test_mixture_validation():
    with pytest.raises(ValueError):
        an.GaussianMixture1D((0.6, 0.6), (0.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        an.GaussianMixture1D((1.0,), (0.0,), (0.0,))


def test_marginal_interpolates_to_standard_normal(gm, sched):
    late = an.marginal_at(gm, sched.T, sched)
    # by T the mixture is nearly fully corrupted toward N(0, 1)
    _, _, abar = sched.at(sched.T)
    assert abs(late.means[0]) < np.sqrt(abar) * 2.1
    for s in late.stds:
        assert abs(s - 1.0) < 0.1


def test_score_matches_numeric_log_density_gradient(gm, sched):
    xs = np.linspace(-4, 4, 17)
    for t in (1, 50, 150):
        h = 1e-6
        fd = (an.log_density(gm, xs + h, t, sched)
              - an.log_density(gm, xs - h, t, sched)) / (2 * h)
        assert np.allclose(an.score(gm, xs, t, sched), fd, atol=1e-6)


def test_single_component_score_is_gaussian_score(gm, sched):
    xs = np.linspace(-4, 4, 9)
    t = 40
    _, _, abar = sched.at(t)
    m = np.sqrt(abar) * gm.means[1]
    v = abar * gm.stds[1] ** 2 + (1 - abar)
    assert np.allclose(an.score(gm, xs, t, sched, component=1), -(xs - m) / v)


def test_optimal_eps_minimizes_denoising_objective(gm, sched):
    # eps*(x_t) = E[eps | x_t]; verify by regression against forward draws
    rng = np.random.default_rng(0)
    t = 60
    comp = rng.random(400_000) < gm.weights[1]
    x0 = np.where(comp, gm.means[1], gm.means[0]) \
        + np.asarray(gm.stds)[comp.astype(int)] * rng.standard_normal(comp.shape)
    eps = rng.standard_normal(x0.shape)
    _, _, abar = sched.at(t)
    xt = np.sqrt(abar) * x0 + np.sqrt(1 - abar) * eps
    for x_star in (-1.5, -0.5, 0.5, 1.5):
        sel = np.abs(xt - x_star) < 0.02
        assert sel.sum() > 2000
        emp = eps[sel].mean()
        assert an.optimal_eps(gm, x_star, t, sched) == pytest.approx(emp,
                                                                     abs=0.05)


def test_unconditional_chains_recover_mixture(gm, sched):
    xs = an.reverse_chains(gm, sched, 5000, seed=0)
    frac = an.component_fractions(gm, xs)
    assert abs(frac[0] - 0.5) < 0.03
    lo = xs[xs < 0]
    assert lo.mean() == pytest.approx(-2.0, abs=0.05)
    assert lo.std() == pytest.approx(0.3, abs=0.05)


def test_conditional_chains_land_on_component(gm, sched):
    xs = an.reverse_chains(gm, sched, 5000, seed=1, component=1)
    assert xs.mean() == pytest.approx(2.0, abs=0.05)
    assert xs.std() == pytest.approx(0.3, abs=0.05)


def test_guidance_monotone_on_overlapping_mixture(sched):
    # overlapping components so the conditioned fraction is not saturated
    gm = an.GaussianMixture1D((0.5, 0.5), (-0.8, 0.8), (0.8, 0.8))
    fracs = []
    for w in (0.0, 1.0, 3.0):
        xs = an.reverse_chains(gm, sched, 4000, seed=2, component=1,
                               guidance=w)
        fracs.append(an.component_fractions(gm, xs)[1])
    assert fracs[0] < fracs[1] < fracs[2]


def test_guidance_monotone_mean_shift(gm, sched):
    means = [an.reverse_chains(gm, sched, 2000, seed=3, component=1,
                               guidance=w).mean() for w in (0.0, 0.5, 1.5)]
    assert means[0] < means[1] < means[2]


def test_verify_cfg_reduction_report(gm, sched):
    report = an.verify_cfg_reduction(gm, sched, n_chains=3000, seed=0)
    assert report["scalar_equals_per_modality"]
    assert report["w0_identity"]
    assert report["conditional_mean"] == pytest.approx(2.0, abs=0.05)
    assert report["conditional_std"] == pytest.approx(0.3, abs=0.05)
