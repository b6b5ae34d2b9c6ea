"""Acceptance criteria, each at its stated tolerance and time budget.

Every test records one ``PASS``/``FAIL`` line (printed again in the terminal
summary) before asserting.  Criteria that this implementation does not meet
fail here; they are not skipped or marked as expected failures.
"""
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from opt_manifold import chaos, config
from opt_manifold.experiments import run_experiment
from opt_manifold.objectives import (CylinderParams, from_cylindrical, make_objective,
                                     to_cylindrical, well_global_minimizer)
from opt_manifold.outer_loop import (CONVERGED, GRID, OuterConfig, cylinder_chart, run_baselines,
                                     run_grid, run_ridge)
from opt_manifold.sampler import SamplerParams, rwmh_burst
from opt_manifold.rng import substream

from conftest import ACCEPTANCE_LINES
from oracles import ou_moments, well_angle_prime

pytestmark = pytest.mark.slow


def report(num: int, name: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {num:2d}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def _rel(a, b):
    return abs(a - b) / abs(b)


# ---------------------------------------------------------------------------
# 1. RWMH and Langevin agree on the quadratic

def test_c01_rwmh_langevin_equivalence(tmp_path):
    cfg = config.resolve("fig1-density")
    with Timer() as t:
        s = run_experiment("fig1-density", cfg, tmp_path)["summary"]
    mean, var = ou_moments(1.0, 0.1, 1.0, 0.5)
    assert mean == pytest.approx(math.exp(-0.1)) and var == pytest.approx(0.5 * (1 - math.exp(-0.2)))
    rm, rv = _rel(s["rwmh_mean"], mean), _rel(s["rwmh_var"], var)
    ok = rm <= 0.10 and rv <= 0.10 and s["mean_gap_in_se"] < 4 and t.elapsed < 10
    report(1, "RWMH vs Langevin", ok,
           f"mean rel err {rm:.3f}, var rel err {rv:.3f} (<= 0.10); RWMH-Langevin gap "
           f"{s['mean_gap_in_se']:.2f} SE (< 4); {t.elapsed:.1f} s (< 10)")


# ---------------------------------------------------------------------------
# 2. Gibbs equilibrium

def test_c02_gibbs_equilibrium():
    f = make_objective("quad1d")
    burn, n_acc = 10_000, 1_000_000
    with Timer() as t:
        traj = rwmh_burst([0.0], SamplerParams(0.5, 0.1), f.energy, substream(0, "gibbs"),
                          n_accepted=burn + n_acc, record="all", max_proposals=10_000_000)
        x = traj.states[:, 0]
        moved = np.r_[False, x[1:] != x[:-1]]
        start = int(np.searchsorted(np.cumsum(moved), burn))
        v = x[start:].var()
    ok = _rel(v, 0.5) <= 0.05 and t.elapsed < 60
    report(2, "Gibbs variance", ok,
           f"variance {v:.4f} vs T=0.5, rel err {_rel(v, 0.5):.4f} (<= 0.05) over "
           f"{x.size - start} states; {t.elapsed:.1f} s (< 60)")


# ---------------------------------------------------------------------------
# 3. ridge speedup over plain RWMH

def test_c03_ridge_speedup():
    cfg = config.resolve("ridge", overrides={"outer.n_coarse_iters": "30"})
    f = make_objective("bayes_ridge")
    oc = OuterConfig(n_coarse_iters=cfg["outer.n_coarse_iters"], T=cfg["sampler.T"],
                     dt=cfg["sampler.dt"], n_accepted=cfg["sampler.n_accept"],
                     step_factor=cfg["outer.step_factor"], min_correlation=cfg["outer.min_correlation"],
                     gh_delta=cfg["gh.delta"], gh_epsilon=cfg["gh.epsilon"])
    r0, th0 = cfg["ridge.r0"], cfg["ridge.theta0"]
    start = np.array([r0 * math.cos(th0), r0 * math.sin(th0)])
    seeds = list(range(10))
    with Timer() as t:
        coarse = [run_ridge(oc, f, start, s).first_reach(0.99) for s in seeds]
        base = [h.first_reach(0.99) for h in
                run_baselines(f, cfg["baseline.budget"], oc.sampler, [start] * 10, seeds)]
    inf = float("inf")
    mc = float(np.median([inf if v is None else v for v in coarse]))
    mb = float(np.median([inf if v is None else v for v in base]))
    ratio = mc / mb
    ok = ratio <= 0.5 and t.elapsed < 300
    report(3, "ridge speedup", ok,
           f"median evals to f >= 0.99: coarse {mc:.0f}, RWMH {mb:.0f}, ratio {ratio:.3f} "
           f"(<= 0.5); {t.elapsed:.0f} s (< 300)")


# ---------------------------------------------------------------------------
# 4. constant-gradient coefficient recovery

def test_c04_linear2d_recovery(tmp_path):
    cfg = config.resolve("grid-linear2d", flags={"seed": 1})
    with Timer() as t:
        s = run_experiment("grid-linear2d", cfg, tmp_path)["summary"]
    plane = max(s["euclidean/plane"])
    mahal = max(s["mahalanobis/sphere"])
    control = max(s["euclidean/sphere"])
    ok = plane <= 0.25 and mahal <= 0.25 and control > 0.25 and t.elapsed < 300
    report(4, "drift recovery", ok,
           f"worst median rel err: Euclidean/plane {plane:.3f}, Mahalanobis/sphere {mahal:.3f} "
           f"(<= 0.25); Euclidean/sphere control {control:.3f} (> 0.25); {t.elapsed:.0f} s (< 300)")


# ---------------------------------------------------------------------------
# 5. cylinder convergence

def test_c05_cylinder_convergence():
    cfg = config.resolve("cylinder")
    cyl = CylinderParams(cfg["cyl.k1"], cfg["cyl.k2"], cfg["cyl.R"])
    f = make_objective("cylinder_well", cyl)
    oc = OuterConfig(mode=GRID, n_coarse_iters=15, T=cfg["sampler.T"], dt=cfg["sampler.dt"],
                     grid_shape=(cfg["outer.grid_rows"], cfg["outer.grid_cols"]),
                     grid_extent=(cfg["outer.grid_extent_theta"], cfg["outer.grid_extent_z"]),
                     n_traj=cfg["outer.n_traj"], burst_duration=cfg["outer.burst_duration"],
                     t_ode=cfg["outer.t_ode"], ode_steps=cfg["outer.ode_steps"],
                     surface_degree=cfg["outer.degree"], tol=cfg["outer.tol"],
                     gh_train=cfg["outer.gh_train"], gh_delta=cfg["gh.delta"],
                     gh_epsilon=cfg["gh.epsilon"])
    th_star = well_global_minimizer()
    assert abs(well_angle_prime(th_star)) < 1e-6
    start = from_cylindrical(cyl.R, -math.pi / 4, 0.0)
    hits, finals = 0, []
    with Timer() as t:
        for seed in range(10):
            h = run_grid(oc, f, start, seed, chart=cylinder_chart(cyl.R))
            r, th, z = (float(v) for v in to_cylindrical(h.final_point))
            finals.append(th)
            hits += (h.status == CONVERGED and len(h.records) <= 15 and abs(th - th_star) <= 0.15
                     and abs(r - cyl.R) <= 0.05 and abs(z) <= 0.05)
    ok = hits >= 8 and t.elapsed < 600
    report(5, "cylinder from -pi/4", ok,
           f"{hits}/10 seeds within tolerance of theta*={th_star:.3f} (>= 8); final theta in "
           f"[{min(finals):.2f}, {max(finals):.2f}]; {t.elapsed:.0f} s (< 600)")


# ---------------------------------------------------------------------------
# 6, 7. chaotic forcing, additive noise

@pytest.fixture(scope="module")
def additive():
    cfg = config.resolve("chaos-additive", flags={"seed": 1})
    spec = chaos.ChaosSpec.for_mode(chaos.ADDITIVE, n_starts=cfg["chaos.n_starts"],
                                    n_traj=cfg["chaos.n_traj"], n_cov=cfg["chaos.n_cov"],
                                    smoothing=cfg["chaos.smoothing"])
    params = chaos.LorenzParams.for_mode(chaos.ADDITIVE)
    t0 = time.perf_counter()
    data = chaos.simulate(spec, params, cfg["seed"])
    plain = chaos.run_chaos_experiment(spec, params, chaos.ADDITIVE, cfg["seed"], None, data)
    curved = chaos.run_chaos_experiment(spec, params, chaos.ADDITIVE, cfg["seed"], "semicircle", data)
    return plain, curved, time.perf_counter() - t0


def test_c06_additive_coefficients(additive):
    rep, _, elapsed = additive
    A, s = rep.coefficients["A"], rep.coefficients["sigma"]
    dev = {"drift/fit": rep.drift.deviation("plugin_fit"),
           "drift/point": rep.drift.deviation("plugin_point"),
           "diff/fit": rep.diffusion.deviation("plugin_fit"),
           "diff/point": rep.diffusion.deviation("plugin_point")}
    ok = 0.80 <= A <= 1.10 and 0.09 <= s <= 0.15 and max(dev.values()) <= 0.30 and elapsed < 900
    report(6, "Lorenz additive", ok,
           f"A {A:.3f} (in [0.80, 1.10]), sigma {s:.3f} (in [0.09, 0.15]); route deviations "
           + ", ".join(f"{k} {v:.3f}" for k, v in dev.items()) + f" (<= 0.30); {elapsed:.0f} s (< 900)")


def test_c07_mahalanobis_invariance(additive):
    plain, curved, elapsed = additive
    rho = chaos.embedding_agreement(plain.psi, curved.psi)
    ok = rho >= 0.95 and elapsed < 900
    report(7, "Mahalanobis invariance", ok,
           f"|Pearson| between psi_1 with and without the semicircle map {rho:.4f} (>= 0.95)")


# ---------------------------------------------------------------------------
# 8. swiss roll

def test_c08_swiss_roll(tmp_path):
    cfg = config.resolve("swissroll")
    with Timer() as t:
        s = run_experiment("swissroll", cfg, tmp_path)["summary"]
    j_arc, rho_arc = s["best_arclength"]
    height = [(r, j + 1) for j, r in enumerate(s["spearman_height"])
              if j + 1 != j_arc and not s["harmonic_flags"][j]]
    rho_h, j_h = max(height)
    ok = rho_arc >= 0.95 and rho_h >= 0.9 and t.elapsed < 60
    report(8, "swiss roll", ok,
           f"psi_{j_arc} vs arclength {rho_arc:.4f} (>= 0.95); psi_{j_h} (not a harmonic) vs "
           f"height {rho_h:.4f} (>= 0.9); {t.elapsed:.1f} s (< 60)")


# ---------------------------------------------------------------------------
# 9. chaotic forcing, multiplicative noise

def test_c09_multiplicative_properties(tmp_path):
    cfg = config.resolve("chaos-multiplicative", flags={"seed": 1})
    s = run_experiment("chaos-multiplicative", cfg, tmp_path)["summary"]
    dev = s["deviation"]
    par = s["parity_sigma"]
    ok = max(dev.values()) <= 0.35 and max(par.values()) < 3
    report(9, "Lorenz multiplicative", ok,
           "route deviations " + ", ".join(f"{k} {v:.3f}" for k, v in dev.items())
           + " (<= 0.35); even drift terms " + ", ".join(f"x^{k} {v:.1f} sigma" for k, v in par.items())
           + " (< 3)")


# ---------------------------------------------------------------------------
# 10. invariant suites

INVARIANT_MODULES = ["test_dmaps.py", "test_harmonics.py", "test_sde_estimate.py",
                     "test_sampler.py", "test_outer_loop.py", "test_ito_transport.py",
                     "test_objectives.py"]


def test_c10_invariant_suites():
    here = Path(__file__).parent
    with Timer() as t:
        r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                            *[str(here / m) for m in INVARIANT_MODULES]],
                           capture_output=True, text=True, cwd=here.parent)
    tail = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr[-200:]
    ok = r.returncode == 0 and t.elapsed < 60
    report(10, "invariant suites", ok, f"{tail}; {t.elapsed:.1f} s (< 60)")


# ---------------------------------------------------------------------------
# supplementary checks (not numbered criteria)

def test_cylinder_from_positive_quarter_converges():
    cfg = config.resolve("cylinder")
    cyl = CylinderParams(cfg["cyl.k1"], cfg["cyl.k2"], cfg["cyl.R"])
    oc = OuterConfig(mode=GRID, n_coarse_iters=15, T=cfg["sampler.T"], dt=cfg["sampler.dt"])
    h = run_grid(oc, make_objective("cylinder_well", cyl), from_cylindrical(cyl.R, math.pi / 4, 0.0),
                 0, chart=cylinder_chart(cyl.R))
    r, th, z = (float(v) for v in to_cylindrical(h.final_point))
    assert h.status == CONVERGED
    assert abs(th - well_global_minimizer()) <= 0.15 and abs(r - cyl.R) <= 0.05 and abs(z) <= 0.05


def test_additive_embedding_tracks_x(additive):
    rep = additive[0]
    assert abs(spearmanr(rep.psi, rep.data_x).statistic) >= 0.99


def test_additive_drift_is_odd(additive):
    # module invariant: a constant term added to the odd drift fit stays below 3 sigma
    rep = additive[0]
    assert rep.extra["parity"][0] < 3.0, f"constant term {rep.extra['parity'][0]:.1f} sigma"


def test_multiplicative_parity_with_stationary_starts():
    # diagnostic for criterion 9: giving every burst its own attractor state
    # removes the even drift terms that the shared start introduces
    spec = chaos.ChaosSpec.for_mode(chaos.MULTIPLICATIVE, y_start="stationary")
    params = chaos.LorenzParams.for_mode(chaos.MULTIPLICATIVE)
    data = chaos.simulate(spec, params, 1)
    th1, _ = chaos.x_space_estimates(data)
    par = chaos.parity_check(spec.starts, th1, chaos.MULTIPLICATIVE)
    assert max(par.values()) < 3.0, par
