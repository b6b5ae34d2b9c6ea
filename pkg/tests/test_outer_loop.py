import numpy as np
import pytest

from opt_manifold.errors import ContractError, DegeneracyError
from opt_manifold.objectives import constant_objective, make_objective
from opt_manifold.outer_loop import (BUDGET, CONVERGED, CONVERGED_AMBIGUOUS, ITER_LIMIT, GRID,
                                     Hull, OuterConfig, RunHistory, geometric_median,
                                     integrate_drift, local_grid, outlier_filter, run_baseline,
                                     run_baselines, run_grid, run_ridge)
from opt_manifold.sampler import SamplerParams


def test_config_validation():
    with pytest.raises(ContractError, match="mode"):
        OuterConfig(mode="simplex")
    with pytest.raises(ContractError, match="n_traj"):
        OuterConfig(n_traj=0)
    with pytest.raises(ContractError):
        OuterConfig(T=-1.0)


def test_geometric_median_robust():
    P = np.vstack([np.random.default_rng(0).normal(size=(99, 2)) * 0.01, [[100.0, 100.0]]])
    assert np.linalg.norm(geometric_median(P)) < 0.01
    # collinear, odd count: the middle point
    np.testing.assert_allclose(geometric_median(np.array([[0.0, 0], [1, 0], [5, 0]])), [1, 0], atol=1e-6)


def test_outlier_filter_drops_planted_points():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(200, 2))
    s = rng.normal(size=200)
    P[:3] = 50.0                  # far away
    s[3:6] = -100.0               # much worse objective
    keep = outlier_filter(P, s)
    assert not keep[:6].any()
    assert keep[6:].mean() > 0.95


def test_outlier_filter_contracts():
    with pytest.raises(ContractError):
        outlier_filter(np.zeros((5, 2)), np.zeros(5))
    # 5 much worse scores, and 3 of the 7 good points far from the cluster: only 4 survive
    rng = np.random.default_rng(2)
    s = np.concatenate([rng.normal(scale=1e-3, size=7), -1e3 * (1 + rng.random(5))])
    P = rng.normal(scale=1e-2, size=(12, 2))
    P[4:7] += 100.0
    with pytest.raises(DegeneracyError):
        outlier_filter(P, s)


def test_history_trace_queries():
    h = RunHistory(start=np.zeros(1), maximize=False)
    h.observe([5.0, 6.0, 3.0, np.nan, 1.0], [1, 2, 3, 4, 5])
    assert h.trace_evals == [1, 3, 5] and h.best_f == 1.0
    assert h.first_reach(3.0) == 3 and h.first_reach(0.0) is None
    assert h.best_at(4) == 3.0 and np.isnan(h.best_at(0))


def test_baseline_budget_zero():
    f = make_objective("quad1d")
    h = run_baseline(f, 0, SamplerParams(0.5, 1e-3), [1.0], 0)
    assert h.evals == 0 and h.trace_best == []


def test_baseline_eval_accounting_and_lockstep():
    f = make_objective("linear2d")
    p = SamplerParams(0.2, 1e-3)
    solo = run_baseline(f, 2501, p, [0.3, 0.1], 7, chunk=1000)
    both = run_baselines(f, 2501, p, [[1.0, 1.0], [0.3, 0.1]], [3, 7], chunk=1000)
    assert solo.evals == 2501 and solo.status == BUDGET
    assert both[1].trace_evals == solo.trace_evals
    np.testing.assert_array_equal(both[1].trace_best, solo.trace_best)
    assert max(solo.trace_evals) <= 2501
    # the running best only improves
    assert np.all(np.diff(solo.trace_best) < 0)


def test_ridge_flat_objective_stops_ambiguous():
    cfg = OuterConfig(T=0.05, dt=1e-3, n_accepted=200, n_coarse_iters=3)
    h = run_ridge(cfg, constant_objective(2), [0.0, 0.0], seed=0)
    assert h.status == CONVERGED_AMBIGUOUS
    assert len(h.records) == 1
    np.testing.assert_array_equal(h.final_point, [0.0, 0.0])


def test_ridge_eval_accounting():
    cfg = OuterConfig(T=0.02, dt=0.005, n_accepted=300, n_coarse_iters=2)
    f = make_objective("bayes_ridge")
    h = run_ridge(cfg, f, [0.0, 2.0], seed=1)
    assert h.status in (ITER_LIMIT, CONVERGED_AMBIGUOUS)
    prop = sum(r.info["proposals"] + 1 for r in h.records)
    lifts = sum(1 for r in h.records if "psi_target" in r.info)
    assert h.evals == prop + lifts
    assert h.trace_evals[-1] <= h.evals


def test_local_grid_and_hull():
    g = local_grid([1.0, 2.0], (3, 4), (2.0, 3.0))
    assert g.shape == (12, 2)
    np.testing.assert_allclose(g[0], [0.0, 0.5])
    np.testing.assert_allclose(g[-1], [2.0, 3.5])
    hull = Hull(g, margin=0.1)
    assert hull.contains([[1.0, 2.0], [2.05, 2.0]]).all()
    assert not hull.contains([[2.2, 2.0]])[0]


def test_integrate_drift_stops_at_hull():
    hull = Hull(local_grid([0, 0], (3, 3), (2, 2)), margin=0.0)
    path, n = integrate_drift(lambda p: np.array([1.0, 0.0]), [0.0, 0.0], 5.0, 50, hull)
    assert n == 10
    np.testing.assert_allclose(path[-1], [1.0, 0.0])


def test_grid_flat_objective_converges():
    cfg = OuterConfig(mode=GRID, T=0.1, dt=5e-4, n_traj=25, burst_duration=0.01,
                      grid_shape=(6, 6), grid_extent=(0.3, 0.3), n_coarse_iters=2)
    h = run_grid(cfg, constant_objective(2), [0.0, 0.0], seed=0)
    assert h.status == CONVERGED


def test_grid_first_step_follows_gradient():
    cfg = OuterConfig(mode=GRID, T=0.1, dt=5e-4, n_traj=25, burst_duration=0.01,
                      grid_shape=(6, 6), grid_extent=(0.3, 0.3), n_coarse_iters=1, t_ode=0.1)
    h = run_grid(cfg, make_objective("linear2d"), [0.0, 0.0], seed=0)
    step = h.final_point - h.start
    d = -np.array([1.0, 2.0]) / np.sqrt(5)
    cos = step @ d / np.linalg.norm(step)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))) < 20.0


def test_single_planted_outlier_removed_exactly():
    rng = np.random.default_rng(10)
    P = rng.normal(size=(300, 2)) * 0.1
    P[17] = [3.0, -3.0]
    keep = outlier_filter(P, np.zeros(300) + rng.normal(scale=1e-3, size=300))
    assert not keep[17]
    # a Gaussian cloud loses only its far tail
    assert keep.sum() >= 0.99 * 300 - 1


def test_tight_gaussian_cloud_mostly_kept():
    rng = np.random.default_rng(11)
    keep = outlier_filter(rng.normal(size=(5000, 3)), rng.normal(size=5000))
    assert keep.mean() >= 0.99


def test_ridge_burst_cloud_hugs_ridge():
    from opt_manifold.sampler import rwmh_burst
    from opt_manifold.rng import substream
    f = make_objective("bayes_ridge")
    traj = rwmh_burst([0.0, 2.0], SamplerParams(0.02, 0.005), f.energy, substream(0, "t"),
                      n_accepted=1000)
    keep = outlier_filter(traj.states, -traj.values)
    r = np.linalg.norm(traj.states[keep], axis=1)
    assert np.all(np.abs(r - 2.0) < 0.5)


def test_ridge_step_ignores_eigenvector_sign(monkeypatch):
    from opt_manifold import outer_loop
    from opt_manifold.sampler import rwmh_burst
    from opt_manifold.rng import substream
    f = make_objective("bayes_ridge")
    traj = rwmh_burst([0.0, 2.0], SamplerParams(0.02, 0.005), f.energy, substream(3, "t"),
                      n_accepted=1000)
    cloud, scores = traj.states, -traj.values
    cfg = OuterConfig(T=0.02, dt=0.005)
    a, _ = outer_loop.ridge_step(cloud, scores, cfg)
    real = outer_loop.diffusion_map

    def flipped(*args, **kw):
        emb = real(*args, **kw)
        emb.coords[:] *= -1.0
        return emb

    monkeypatch.setattr(outer_loop, "diffusion_map", flipped)
    b, _ = outer_loop.ridge_step(cloud, scores, cfg)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_gh_epsilon_validation():
    with pytest.raises(ContractError, match="gh.epsilon"):
        OuterConfig(gh_epsilon=-1.0)
    OuterConfig(gh_epsilon=0.3)


def test_ridge_median_running_max_nondecreasing():
    cfg = OuterConfig(T=0.02, dt=0.005, n_accepted=300, n_coarse_iters=3)
    f = make_objective("bayes_ridge")
    curves = []
    for seed in range(10):
        h = run_ridge(cfg, f, [0.0, np.sqrt(4.32)], seed)
        best = [h.best_at(r.evals) for r in h.records]
        best += [best[-1]] * (cfg.n_coarse_iters - len(best))
        curves.append(best)
    med = np.median(np.array(curves), axis=0)
    assert np.all(np.diff(med) >= 0)
