import math

import numpy as np
import pytest

from core.errors import DomainError
from mixhead.schemas import Mixture, RawMixture, TargetPoint
from mixhead.service import (
    density,
    density_grid,
    log_density,
    nll,
    nll_and_grad,
    normalize,
    roulette_pick,
    sample_point,
    sample_points,
)
from numcore.service import SeededRng, finite_diff_grad


def single(rho=0.0, mu=(0.0, 0.0, 0.0), sigma=(1.0, 1.0, 1.0)) -> Mixture:
    return Mixture(weights=[1.0], mu=[mu], sigma=[sigma], rho=[rho])


def three_component() -> Mixture:
    return Mixture(
        weights=[0.2, 0.5, 0.3],
        mu=[[-2.0, 1.0, 0.5], [0.0, 0.0, 0.0], [3.0, -1.0, -0.5]],
        sigma=[[0.5, 0.8, 0.3], [1.0, 1.0, 1.0], [0.7, 0.4, 0.9]],
        rho=[0.5, -0.3, 0.8],
    )


def test_normalize_reference_values():
    raw = np.zeros((3, 8))
    mix = normalize(RawMixture(values=raw))
    assert np.allclose(mix.weights, 1 / 3, atol=1e-15)
    assert np.all(mix.sigma == 1.0) and np.all(mix.rho == 0.0)

    raw[:, 0] = [1.0, 2.0, 3.0]
    mix = normalize(raw)
    assert mix.weights == pytest.approx([0.09003, 0.24473, 0.66524], abs=1e-5)


def test_normalize_invariants_on_random_raw_inputs():
    raw = SeededRng(5).uniform(-60, 60, size=(100_000, 3, 8))
    mix = normalize(raw)
    assert np.max(np.abs(mix.weights.sum(axis=-1) - 1.0)) < 1e-12
    assert np.all(mix.weights >= 0)
    assert np.all(mix.sigma > 0)
    assert np.all(np.abs(mix.rho) < 1)


def test_raw_mixture_from_flat_layout():
    raw = RawMixture.from_flat(np.arange(24.0), 3)
    assert raw.values.shape == (3, 8)
    assert raw.values[1, 0] == 8.0


def test_density_closed_forms():
    origin = TargetPoint(dx=0.0, dy=0.0, dz=0.0)
    assert density(single(), origin) == pytest.approx(0.0634936, abs=1e-6)
    expected = 1.0 / (2 * math.pi * math.sqrt(0.75)) / math.sqrt(2 * math.pi)
    assert density(single(rho=0.5), origin) == pytest.approx(expected, rel=1e-12)
    assert density(single(rho=0.5), origin) == pytest.approx(0.07332, abs=1e-4)


def test_duplicated_components_match_single_component():
    doubled = Mixture(weights=[0.5, 0.5], mu=[[0, 0, 0]] * 2, sigma=[[1, 1, 1]] * 2, rho=[0.0, 0.0])
    y = np.array([0.3, -0.2, 1.1])
    assert density(doubled, y) == pytest.approx(density(single(), y), rel=1e-14)
    assert nll(doubled, y) == pytest.approx(nll(single(), y), rel=1e-14)


def test_nll_reference_and_monotonicity():
    assert nll(single(), TargetPoint(dx=0, dy=0, dz=0), length=1) == pytest.approx(2.7568, abs=1e-4)
    near = nll(single(), np.array([0.0, 0.0, 0.0]))
    far = nll(single(), np.array([5.0, 0.0, 0.0]))
    assert far > near


def test_nll_length_mismatch():
    with pytest.raises(DomainError):
        nll([single(), single()], np.zeros((3, 3)))


def test_stable_and_naive_nll_agree():
    rng = SeededRng(9)
    for _ in range(50):
        mix = normalize(rng.uniform(-2, 2, size=(4, 3, 8)))
        targets = rng.normal((4, 3))
        assert nll(mix, targets) == pytest.approx(nll(mix, targets, stable=False), abs=1e-10)


def test_stable_nll_survives_underflow():
    far = np.array([[80.0, 80.0, 80.0]])
    assert np.isfinite(nll(single(), far))


def test_density_integrates_to_one_by_importance_sampling():
    mix = single(rho=0.3, mu=(1.0, -1.0, 0.5), sigma=(0.5, 1.5, 0.8))
    rng = SeededRng(21)
    n = 100_000
    scale = 1.5 * mix.sigma[0]
    points = mix.mu[0] + scale * rng.normal((n, 3))
    proposal = np.prod(np.exp(-0.5 * ((points - mix.mu[0]) / scale) ** 2) / (scale * np.sqrt(2 * np.pi)), axis=1)
    estimate = np.mean(density(mix, points) / proposal)
    assert estimate == pytest.approx(1.0, abs=0.02)
    assert np.all(density(mix, points) >= 0)


def test_nll_gradient_matches_finite_differences():
    rng = SeededRng(4)
    raw = rng.uniform(-1.5, 1.5, size=(2, 3, 8))
    targets = rng.normal((2, 3))
    _, grad = nll_and_grad(raw, targets)

    def f(flat):
        return float(nll_and_grad(flat.reshape(raw.shape), targets)[0].sum())

    numeric = finite_diff_grad(f, raw.ravel(), 1e-6)
    assert np.allclose(grad.ravel(), numeric, rtol=1e-5, atol=1e-7)


def test_nll_and_grad_agrees_with_normalized_path():
    rng = SeededRng(8)
    raw = rng.uniform(-2, 2, size=(5, 3, 8))
    targets = rng.normal((5, 3))
    per_step, _ = nll_and_grad(raw, targets)
    assert per_step.sum() == pytest.approx(nll(normalize(raw), targets), rel=1e-9)


def test_clamped_coordinates_have_zero_gradient():
    raw = np.zeros((1, 8))
    raw[0, 4] = -25.0
    raw[0, 7] = 12.0
    _, grad = nll_and_grad(raw, np.array([0.1, 0.2, 0.3]))
    assert grad[0, 4] == 0.0 and grad[0, 7] == 0.0


def test_roulette_pick_cases():
    assert roulette_pick(Mixture(weights=[1, 0, 0], mu=np.zeros((3, 3)), sigma=np.ones((3, 3)), rho=np.zeros(3)), 0.99) == 0
    mix = three_component()
    assert roulette_pick(mix, 0.65) == 1
    assert roulette_pick(mix, 0.1) == 0
    assert roulette_pick(mix, 0.95) == 2


def test_roulette_frequencies():
    mix = three_component()
    rng = SeededRng(13)
    picks = [roulette_pick(mix, u) for u in rng.uniform(size=100_000)]
    freq = np.bincount(picks, minlength=3) / len(picks)
    assert np.allclose(freq, mix.weights, atol=0.01)


def test_degenerate_sigma_samples_sit_on_the_mean():
    raw = np.zeros((1, 8))
    raw[0, 1:4] = [0.4, -1.2, 2.0]
    raw[0, 4:7] = -30.0
    mix = normalize(raw, clamp=False)
    point = sample_point(mix, SeededRng(1))
    assert np.allclose(point.as_array(), [0.4, -1.2, 2.0], atol=1e-6)


def test_sample_correlations():
    draws = sample_points(single(rho=0.5), SeededRng(17), 100_000)
    assert np.corrcoef(draws[:, 0], draws[:, 1])[0, 1] == pytest.approx(0.5, abs=0.02)
    assert abs(np.corrcoef(draws[:, 2], draws[:, 0])[0, 1]) < 0.02


def test_sampler_reproduces_mixture_statistics():
    mix = three_component()
    n = 100_000
    rng = SeededRng(23)
    cumulative = np.cumsum(mix.weights)
    draws = sample_points(mix, rng, n)
    # recover component membership from a replayed stream
    replay = SeededRng(23)
    picks = np.searchsorted(cumulative, replay.uniform(size=n), side="left")
    for c in range(3):
        members = draws[picks == c]
        assert len(members) / n == pytest.approx(mix.weights[c], abs=0.01)
        tol = 4 * mix.sigma[c] / np.sqrt(len(members))
        assert np.all(np.abs(members.mean(axis=0) - mix.mu[c]) < tol + 1e-12)
        assert np.corrcoef(members[:, 0], members[:, 1])[0, 1] == pytest.approx(mix.rho[c], abs=0.02)


def test_density_grid_mode_and_normalization():
    mix = single(mu=(0.5, -0.25, 0.0))
    grid = density_grid(mix, "xy", (-5.5, 6.5, -6.25, 5.75), 121)
    u, v = grid.mode_point()
    assert abs(u - 0.5) <= 0.05 and abs(v + 0.25) <= 0.05
    assert grid.integral() == pytest.approx(1.0, abs=0.02)
    for plane in ("xz", "yz"):
        g = density_grid(mix, plane, (-6, 6, -6, 6), 121)
        assert g.integral() == pytest.approx(1.0, abs=0.02)


def test_density_grid_principal_axis():
    grid = density_grid(single(rho=0.9), "xy", (-4, 4, -4, 4), 101)
    uu, vv = np.meshgrid(grid.u, grid.v)
    w = grid.values / grid.values.sum()
    cov = np.array([
        [np.sum(w * uu * uu), np.sum(w * uu * vv)],
        [np.sum(w * uu * vv), np.sum(w * vv * vv)],
    ])
    _, vecs = np.linalg.eigh(cov)
    principal = vecs[:, -1]
    assert abs(principal @ np.array([1.0, 1.0]) / np.sqrt(2)) > 0.99


def test_density_grid_slice_and_csv():
    grid = density_grid(three_component(), "xz", (-4, 4, -3, 3), (5, 4), mode="slice")
    assert grid.values.shape == (4, 5)
    lines = grid.to_csv().splitlines()
    assert lines[0] == "u,v,density"
    assert len(lines) == 21


def test_density_grid_rejects_bad_bounds():
    with pytest.raises(DomainError):
        density_grid(single(), "xy", (1, 1, 0, 1), 10)
    with pytest.raises(DomainError):
        density_grid(single(), "xy", (0, 1, 0, 1), 1)


def test_log_density_is_finite_for_zero_weight_components():
    mix = Mixture(weights=[1.0, 0.0], mu=np.zeros((2, 3)), sigma=np.ones((2, 3)), rho=[0.0, 0.0])
    assert np.isfinite(log_density(mix, np.zeros(3)))


def test_weights_must_sum_to_one_within_rounding():
    with pytest.raises(ValueError):
        Mixture(weights=[0.5, 0.5 + 1e-10], mu=np.zeros((2, 3)), sigma=np.ones((2, 3)), rho=[0.0, 0.0])
    mix = normalize(SeededRng(2).uniform(-5, 5, size=(4, 6, 8)))
    assert np.all(np.abs(mix.weights.sum(axis=-1) - 1.0) <= 1e-12)


def test_marginal_grid_values_match_closed_form():
    mix = single(rho=-0.6, mu=(1.0, -1.0, 0.5), sigma=(0.5, 2.0, 1.5))
    grid = density_grid(mix, "xy", (-1.0, 3.0, -5.0, 3.0), (5, 9))
    peak = 1.0 / (2 * math.pi * 0.5 * 2.0 * math.sqrt(1 - 0.36))
    assert grid.values[4, 2] == pytest.approx(peak, rel=1e-9)
    xz = density_grid(mix, "xz", (-1.0, 3.0, -1.5, 2.5), (5, 5))
    assert xz.values[2, 2] == pytest.approx(1.0 / (2 * math.pi * 0.5 * 1.5), rel=1e-9)
