import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opt_manifold.errors import ContractError, NumericalError
from opt_manifold.sde_estimate import (estimate_gmm, estimate_stat, fit_coeff_surface,
                                       fit_polynomial_1d, fit_surface, relative_mask)


def test_brownian_stub():
    rng = np.random.default_rng(0)
    dt, n = 1e-3, 200_000
    x1 = rng.normal(scale=np.sqrt(2 * 0.5 * dt), size=n)
    est = estimate_stat(0.0, x1, dt)
    assert abs(est.drift[0]) < 4 * est.drift_stderr[0]
    assert est.diffusion[0] == pytest.approx(1.0, rel=0.01)


def test_ou_drift_and_diffusion():
    # exact OU transition: mean x0 e^{-th dt}, var s^2 (1 - e^{-2 th dt}) / (2 th)
    rng = np.random.default_rng(1)
    th, s, x0, dt, n = 2.0, 0.7, 1.5, 1e-3, 400_000
    mean = x0 * np.exp(-th * dt)
    var = s ** 2 * (1 - np.exp(-2 * th * dt)) / (2 * th)
    x1 = mean + np.sqrt(var) * rng.standard_normal(n)
    est = estimate_stat(x0, x1, dt, centered=True)
    assert est.drift[0] == pytest.approx(-th * x0, abs=4 * est.drift_stderr[0] + 0.01)
    assert est.diffusion[0] == pytest.approx(s, rel=0.01)


def test_multidimensional_shapes():
    x1 = np.random.default_rng(2).normal(size=(100, 3))
    est = estimate_stat(np.zeros(3), x1, 0.1)
    assert est.drift.shape == (3,) and est.diffusion.shape == (3,)
    with pytest.raises(ContractError):
        estimate_stat(0.0, np.ones(1), 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 1.0))
def test_gmm_stat_relation(seed, dt):
    x = np.cumsum(np.random.default_rng(seed).normal(0.3, 1.0, size=50))
    x = np.concatenate([[0.0], x])
    g = estimate_gmm(x, dt)
    s = estimate_stat(x[:-1], x[1:], dt)
    np.testing.assert_allclose(g.drift, s.drift, rtol=1e-12)
    np.testing.assert_allclose(s.diffusion ** 2, g.diffusion ** 2 + g.drift ** 2 * dt, rtol=1e-10)
    c = estimate_stat(x[:-1], x[1:], dt, centered=True)
    np.testing.assert_allclose(c.diffusion, g.diffusion, rtol=1e-10)


def test_deterministic_series():
    x = 0.5 + 0.25 * np.arange(11)
    g = estimate_gmm(x, 0.5)
    assert g.drift[0] == pytest.approx(0.5)
    assert g.diffusion[0] == pytest.approx(0.0, abs=1e-7)


def test_gmm_pools_series():
    S = np.random.default_rng(3).normal(size=(4, 6, 2)).cumsum(axis=1)
    g = estimate_gmm(S, 0.1)
    dx = np.diff(S, axis=1).reshape(-1, 2)
    np.testing.assert_allclose(g.drift, dx.mean(0) / 0.1)
    assert g.n_samples == 20
    with pytest.raises(ContractError):
        estimate_gmm(np.zeros((3, 1)), 0.1)


def test_negative_diffusion_rejected():
    with pytest.raises(ContractError):
        from opt_manifold.sde_estimate import CoeffEstimate
        CoeffEstimate(np.zeros(1), -np.ones(1), 5)


def test_poly_fit_recovers_odd_cubic():
    x = np.linspace(-1.5, 1.5, 200)
    y = 2.0 * x - 0.5 * x ** 3
    fit = fit_polynomial_1d(x, y, [1, 3])
    assert fit.coefficient(1) == pytest.approx(2.0, abs=1e-12)
    assert fit.coefficient(3) == pytest.approx(-0.5, abs=1e-12)
    np.testing.assert_allclose(fit(x), y, atol=1e-12)


def test_poly_fit_errors_scale():
    rng = np.random.default_rng(4)
    x = np.linspace(-1, 1, 400)
    fit = fit_polynomial_1d(x, 1.0 + 0.1 * rng.standard_normal(400), [0])
    assert fit.stderr[0] == pytest.approx(0.1 / 20, rel=0.1)
    assert fit.residual_std == pytest.approx(0.1, rel=0.1)


def test_rank_deficient_names_direction():
    with pytest.raises(NumericalError, match="degenerate direction"):
        fit_polynomial_1d(np.ones(10), np.ones(10), [0, 1])


def test_surface_exact_quadratic_and_gradient():
    rng = np.random.default_rng(5)
    c = rng.uniform(-1, 1, size=(50, 2))
    v = 1 + 2 * c[:, 0] - c[:, 1] + 0.5 * c[:, 0] ** 2 + 0.3 * c[:, 0] * c[:, 1] - c[:, 1] ** 2
    fit = fit_surface(c, v, degree=2)
    np.testing.assert_allclose(fit.coefficients, [1, 2, -1, 0.5, 0.3, -1], atol=1e-10)
    g = fit.gradient(np.array([[0.2, -0.3]]))[0]
    np.testing.assert_allclose(g, [2 + 0.2 - 0.09, -1 + 0.06 + 0.6], atol=1e-10)
    assert fit.named["p11"] == pytest.approx(0.3)


def test_surface_needs_points():
    with pytest.raises(ContractError):
        fit_surface(np.zeros((2, 2)), np.zeros(2), degree=1)
    with pytest.raises(ContractError):
        fit_surface(np.zeros((9, 2)), np.zeros(9), degree=3)


def test_relative_mask_and_field():
    v = np.array([1.0, 1.1, 0.9, 0.01, 1.0])
    np.testing.assert_array_equal(relative_mask(v, 0.05), [True, True, True, False, True])
    c = np.random.default_rng(6).uniform(size=(5, 2))
    fld = fit_coeff_surface(c, {"a": v}, degree=1)
    assert fld.mask.sum() == 4
    fld2 = fit_coeff_surface(c, {"a": v}, degree=1, mask_rule=None)
    assert fld2.mask.all()
    with pytest.raises(ContractError):
        fit_coeff_surface(c, {"a": v}, mask_rule="median")


def test_standard_error_scales_with_n():
    # Monte-Carlo spread of the drift estimate: 4x the samples halves it,
    # 2x the samples divides it by sqrt(2)
    rng = np.random.default_rng(7)
    dt, reps = 0.01, 400

    def spread(n):
        x1 = 0.3 * dt + np.sqrt(dt) * rng.standard_normal((reps, n))
        return np.std([estimate_stat(0.0, row, dt).drift[0] for row in x1])

    s1, s2, s4 = spread(100), spread(200), spread(400)
    assert s1 / s4 == pytest.approx(2.0, rel=0.2)
    assert s1 / s2 == pytest.approx(np.sqrt(2.0), rel=0.2)


def test_estimators_agree_within_standard_errors():
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=2000)
    x1 = x0 + 0.05 + 0.1 * rng.standard_normal(2000)
    s = estimate_stat(x0, x1, 0.1)
    g = estimate_gmm(np.stack([x0, x1], axis=1), 0.1)
    assert abs(s.drift[0] - g.drift[0]) <= 2 * np.hypot(s.drift_stderr[0], g.drift_stderr[0])


def test_constant_gradient_drift_independent_of_grid_position():
    from opt_manifold.recovery import RecoverySpec, simulate
    spec = RecoverySpec()
    d = simulate(spec, seed=2, with_cov=False)
    ests = [estimate_stat(d.grid[g], d.ends[g], spec.Dt) for g in range(d.G)]
    drift = np.array([e.drift for e in ests])
    within = np.array([e.drift_stderr ** 2 for e in ests]).mean(0)
    between = drift.var(axis=0, ddof=1)
    assert np.all(between <= 3 * within)
