"""Coarse optimization drivers built on sampler bursts.

``run_ridge`` follows an effectively one-dimensional ridge: embed the burst
cloud with a 1D diffusion map, step along ``psi_1`` in the direction in
which the objective improves and lift the new point with geometric
harmonics.  ``run_grid`` estimates the drift of a 2D embedding from burst
ensembles on a local grid, integrates the fitted drift field (a reduced
gradient descent) and lifts the end point.  ``run_baseline`` is plain RWMH
with the same bookkeeping, for budget-matched comparisons.

All drivers minimize the sampler energy; for maximization objectives the
recorded ``best_f`` is the objective itself, i.e. larger is better.
"""
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import Delaunay
from scipy.stats import chi2, spearmanr

from .dmaps import diffusion_map, select_coordinates
from .errors import ContractError, DegeneracyError
from .harmonics import gh_extend, gh_fit
from .objectives import Objective, from_cylindrical, to_cylindrical
from .rng import child_seed, substream
from .sampler import SamplerParams, ensemble_bursts, rwmh_burst, rwmh_chains
from .sde_estimate import estimate_stat, fit_coeff_surface

RIDGE, GRID = "ridge", "grid"
CONVERGED = "converged"
CONVERGED_AMBIGUOUS = "converged-ambiguous"
ITER_LIMIT = "iter-limit"
BUDGET = "budget"


# ---------------------------------------------------------------------------
# configuration and history

@dataclass(frozen=True)
class OuterConfig:
    mode: str = RIDGE
    n_coarse_iters: int = 6
    T: float = 0.05
    dt: float = 5e-4
    # ridge mode
    n_accepted: int = 1000
    step_factor: float = 1.0          # extrapolate this many psi_1 spans beyond the extreme
    min_correlation: float = 0.2
    # grid mode
    grid_shape: tuple = (8, 10)
    grid_extent: tuple = (0.6, 0.6)
    n_traj: int = 25
    burst_duration: float = 0.01
    t_ode: float = 1.0
    ode_steps: int = 50
    surface_degree: int = 1
    tol: float = 1e-3
    hull_margin: float = 0.1
    max_shrinks: int = 5
    gh_train: int = 600
    gh_delta: float = 1e-3
    gh_epsilon: float | str = "auto"   # lifting kernel scale; "auto" = median distance in psi
    eps_method: str = "median"
    eps_k: int = 10

    def __post_init__(self):
        if self.mode not in (RIDGE, GRID):
            raise ContractError(f"outer.mode must be ridge or grid, got {self.mode!r}")
        SamplerParams(self.T, self.dt)
        for name in ("n_coarse_iters", "n_accepted", "n_traj", "ode_steps", "gh_train"):
            if getattr(self, name) < 1:
                raise ContractError(f"outer.{name} must be >= 1")
        for name in ("step_factor", "burst_duration", "t_ode", "tol"):
            if not getattr(self, name) > 0:
                raise ContractError(f"outer.{name} must be positive")
        if len(self.grid_shape) != 2 or min(self.grid_shape) < 2:
            raise ContractError("outer.grid_shape needs two sizes >= 2")
        if len(self.grid_extent) != 2 or min(self.grid_extent) <= 0:
            raise ContractError("outer.grid_extent needs two positive extents")
        if self.gh_epsilon != "auto" and not (isinstance(self.gh_epsilon, (int, float))
                                              and self.gh_epsilon > 0):
            raise ContractError("gh.epsilon must be positive or 'auto'")
        if self.surface_degree not in (1, 2):
            raise ContractError("outer.surface_degree must be 1 or 2")

    @property
    def sampler(self) -> SamplerParams:
        return SamplerParams(self.T, self.dt)


@dataclass
class IterRecord:
    start: np.ndarray
    cloud_size: int
    cloud_center: np.ndarray
    cloud_spread: float
    epsilon: float
    eigenvalues: np.ndarray
    new_point: np.ndarray
    f_new: float
    evals: int                      # cumulative, after this iteration
    info: dict = field(default_factory=dict)


@dataclass
class RunHistory:
    """Iterates of one run plus a running-best trace.

    ``trace_evals``/``trace_best`` record the best objective value seen so
    far against the cumulative number of objective evaluations, one entry
    per improvement.
    """
    start: np.ndarray
    maximize: bool
    records: list = field(default_factory=list)
    trace_evals: list = field(default_factory=list)
    trace_best: list = field(default_factory=list)
    status: str = ITER_LIMIT
    evals: int = 0

    def _better(self, a, b):
        return a > b if self.maximize else a < b

    def observe(self, values, eval_indices):
        """Feed objective values (not energies) with their global evaluation indices."""
        for v, k in zip(np.atleast_1d(values), np.atleast_1d(eval_indices)):
            if not np.isfinite(v):
                continue
            if not self.trace_best or self._better(v, self.trace_best[-1]):
                self.trace_best.append(float(v))
                self.trace_evals.append(int(k))

    @property
    def best_f(self) -> float:
        return self.trace_best[-1] if self.trace_best else float("nan")

    @property
    def final_point(self) -> np.ndarray:
        return self.records[-1].new_point if self.records else self.start

    def first_reach(self, level: float) -> int | None:
        """Evaluation count at which the running best first reaches ``level``."""
        for k, v in zip(self.trace_evals, self.trace_best):
            if (v >= level) if self.maximize else (v <= level):
                return k
        return None

    def best_at(self, budget: int) -> float:
        """Running best after ``budget`` evaluations."""
        best = float("nan")
        for k, v in zip(self.trace_evals, self.trace_best):
            if k > budget:
                break
            best = v
        return best

    def rows(self):
        """``(iter, evals, best_f, *x)`` per coarse iteration, iteration 0 being the start."""
        out = [(0, self.trace_evals[0] if self.trace_evals else 0,
                self.trace_best[0] if self.trace_best else float("nan"), *self.start)]
        for i, r in enumerate(self.records, 1):
            out.append((i, r.evals, self.best_at(r.evals), *r.new_point))
        return out


def _sign(f: Objective):
    return -1.0 if f.maximize else 1.0


# ---------------------------------------------------------------------------
# outlier filter

def geometric_median(points, tol: float = 1e-9, max_iter: int = 500):
    """Weiszfeld iteration, started from the coordinate-wise median."""
    X = np.asarray(points, dtype=float)
    y = np.median(X, axis=0)
    for _ in range(max_iter):
        d = np.linalg.norm(X - y, axis=1)
        near = d < 1e-12
        if near.any():
            d = np.where(near, 1.0, d)
        w = np.where(near, 0.0, 1.0 / d)
        y_new = (w[:, None] * X).sum(0) / w.sum() if w.sum() > 0 else y
        if np.linalg.norm(y_new - y) <= tol * (1.0 + np.linalg.norm(y)):
            return y_new
        y = y_new
    return y


def _robust_z(v):
    med = np.median(v)
    mad = 1.4826 * np.median(np.abs(v - med))
    if mad == 0:
        return np.zeros_like(v)
    return (v - med) / mad


def outlier_filter(points, scores, z: float = 3.0):
    """Boolean mask of retained points.

    ``scores`` are objective values with larger meaning better.  A point is
    dropped if its robust (median/MAD) z-score of ``scores`` is below
    ``-z``, or if its distance to the geometric median of the survivors has
    a robust z-score above ``z``.
    """
    P = np.asarray(points, dtype=float)
    s = np.asarray(scores, dtype=float)
    m = P.shape[0]
    if m < 10:
        raise ContractError(f"outlier_filter needs at least 10 points, got {m}")
    keep = _robust_z(s) >= -z
    d = np.linalg.norm(P - geometric_median(P[keep]), axis=1)
    keep &= _robust_z(d) <= z
    if keep.sum() < 0.5 * m:
        raise DegeneracyError(f"outlier filter removed {m - keep.sum()} of {m} points; "
                              "the burst cloud is degenerate")
    return keep


# ---------------------------------------------------------------------------
# ridge following

def ridge_step(cloud, scores, cfg: OuterConfig):
    """Target point in ambient space, or ``None`` if no direction stands out.

    Returns ``(target, info)``.
    """
    emb = diffusion_map(cloud, k=1, eps_method=cfg.eps_method, eps_k=cfg.eps_k)
    psi = emb.psi(1)
    # constant scores (a flat objective) carry no direction
    rho = spearmanr(psi, scores).statistic if np.ptp(scores) > 0 else float("nan")
    info = {"epsilon": emb.kernel.epsilon, "eigenvalues": emb.eigenvalues, "rho": float(rho)}
    if not np.isfinite(rho) or abs(rho) < cfg.min_correlation:
        return None, info
    s = math.copysign(1.0, rho)
    span = float(np.ptp(psi))
    target = s * np.max(s * psi) + s * cfg.step_factor * span
    model = gh_fit(psi, cloud, epsilon=cfg.gh_epsilon, delta=cfg.gh_delta)
    x_new, extrap = gh_extend(model, np.array([target]))
    info.update(psi_target=float(target), psi_span=span, extrapolated=bool(extrap[0]))
    return x_new[0], info


def run_ridge(cfg: OuterConfig, objective: Objective, start, seed: int) -> RunHistory:
    """Burst, filter, embed in 1D, step along ``psi_1`` uphill, lift; repeat."""
    x = np.asarray(start, dtype=float)
    sgn = _sign(objective)
    hist = RunHistory(start=x.copy(), maximize=objective.maximize)
    params = cfg.sampler
    for it in range(cfg.n_coarse_iters):
        rng = substream(seed, "ridge-burst", it)
        traj = rwmh_burst(x, params, objective.energy, rng, n_accepted=cfg.n_accepted,
                          eval_offset=hist.evals)
        hist.evals += traj.eval_count
        fvals = sgn * traj.values
        hist.observe(fvals, traj.eval_indices)
        keep = outlier_filter(traj.states, fvals)
        cloud = traj.states[keep]
        target, info = ridge_step(cloud, fvals[keep], cfg)
        info["accepted"] = traj.accepted_count
        info["proposals"] = traj.eval_count - 1
        if target is None:
            hist.records.append(IterRecord(x.copy(), int(keep.sum()), cloud.mean(0),
                                           float(cloud.std(0).sum()), info["epsilon"],
                                           info["eigenvalues"], x.copy(), float(sgn * traj.values[0]),
                                           hist.evals, info))
            hist.status = CONVERGED_AMBIGUOUS
            return hist
        f_new = float(objective(target))
        hist.evals += 1
        hist.observe([f_new], [hist.evals])
        hist.records.append(IterRecord(x.copy(), int(keep.sum()), cloud.mean(0),
                                       float(cloud.std(0).sum()), info["epsilon"], info["eigenvalues"],
                                       target.copy(), f_new, hist.evals, info))
        x = target
    hist.status = ITER_LIMIT
    return hist


# ---------------------------------------------------------------------------
# baseline

def run_baseline(objective: Objective, budget: int, params: SamplerParams, start, seed: int,
                 chunk: int = 100_000) -> RunHistory:
    """Plain RWMH for ``budget`` objective evaluations (the start counts as one)."""
    return run_baselines(objective, budget, params, [start], [seed], chunk)[0]


def run_baselines(objective: Objective, budget: int, params: SamplerParams, starts, seeds,
                  chunk: int = 100_000) -> list[RunHistory]:
    """Several independent baselines advanced in lockstep.

    Chain ``i`` draws only from ``substream(seeds[i], "baseline", chunk_index)``,
    so each history equals that of a solo ``run_baseline`` call.
    """
    if budget < 0:
        raise ContractError("budget must be >= 0")
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    M, n = starts.shape
    sgn = _sign(objective)
    hists = [RunHistory(start=s.copy(), maximize=objective.maximize) for s in starts]
    if budget == 0:
        return hists
    x = starts.copy()
    f0 = sgn * objective.energy(x)
    for h, v in zip(hists, f0):
        h.evals = 1
        h.observe([v], [1])
    done, c = 1, 0
    while done < budget:
        k = min(chunk, budget - done)
        noise = np.empty((M, k, n))
        logu = np.empty((M, k))
        for i, sd in enumerate(seeds):
            rng = substream(sd, "baseline", c)
            noise[i] = rng.standard_normal((k, n))
            logu[i] = np.log(rng.random(k))
        paths, _, _ = rwmh_chains(x, params, objective.energy, noise, logu)
        vals = sgn * objective.energy(paths[:, 1:])
        for i, h in enumerate(hists):
            # a state only improves on the running best when it was just accepted,
            # so scanning the recorded states gives the exact first-hit indices
            h.observe(vals[i], done + 1 + np.arange(k))
            h.evals = done + k
        x = paths[:, -1]
        done += k
        c += 1
    for h in hists:
        h.status = BUDGET
    return hists


# ---------------------------------------------------------------------------
# grid-based reduced gradient descent

@dataclass(frozen=True)
class Chart:
    """Local 2D coordinates ``u`` on a known constraint surface."""
    to_ambient: Callable
    from_ambient: Callable
    name: str = "plane"


PLANE = Chart(lambda u: np.asarray(u, dtype=float), lambda x: np.asarray(x, dtype=float)[..., :2])


def cylinder_chart(R: float) -> Chart:
    """``u = (theta, z)`` on the cylinder of radius ``R``."""
    def to_amb(u):
        u = np.asarray(u, dtype=float)
        return from_cylindrical(R, u[..., 0], u[..., 1])

    def from_amb(x):
        _, th, z = to_cylindrical(x)
        return np.stack([th, z], axis=-1)

    return Chart(to_amb, from_amb, "cylinder")


def local_grid(center, shape, extent):
    """``shape[0] x shape[1]`` grid over ``extent`` centred on ``center``, row-major."""
    a = center[0] + np.linspace(-0.5, 0.5, shape[0]) * extent[0]
    b = center[1] + np.linspace(-0.5, 0.5, shape[1]) * extent[1]
    A, B = np.meshgrid(a, b, indexing="ij")
    return np.column_stack([A.ravel(), B.ravel()])


class Hull:
    """Convex hull of 2D points, enlarged about its centroid by ``1 + margin``."""

    def __init__(self, points, margin: float = 0.1):
        P = np.asarray(points, dtype=float)
        self.center = P.mean(0)
        self._tri = Delaunay(self.center + (1.0 + margin) * (P - self.center))

    def contains(self, q) -> np.ndarray:
        return self._tri.find_simplex(np.atleast_2d(q)) >= 0


def integrate_drift(field_fn: Callable, psi0, t_ode: float, n_steps: int, hull: Hull):
    """Explicit Euler on ``dpsi/dt = field(psi)`` until ``t_ode`` or the hull boundary.

    Returns ``(path, n_inside)`` where ``path[:n_inside + 1]`` stays in the hull.
    """
    h = t_ode / n_steps
    path = [np.asarray(psi0, dtype=float)]
    for _ in range(n_steps):
        nxt = path[-1] + h * field_fn(path[-1])
        if not hull.contains(nxt)[0]:
            break
        path.append(nxt)
    return np.asarray(path), len(path) - 1


@dataclass
class GridIteration:
    """Everything one grid iteration computed (kept for tests and dumps)."""
    grid_u: np.ndarray
    grid_x: np.ndarray
    data: np.ndarray
    psi: np.ndarray
    psi_grid: np.ndarray
    psi_center: np.ndarray
    field: object
    drift_center: np.ndarray
    chi2_center: float
    path: np.ndarray
    t_used: float
    epsilon: float
    eigenvalues: np.ndarray
    coords_used: list


def grid_iteration(cfg: OuterConfig, objective: Objective, x, chart: Chart, seed: int,
                   index: int, eval_offset: int = 0):
    """One coarse grid step from ``x``; returns ``(GridIteration, evals_used)``."""
    u_c = chart.from_ambient(x)
    grid_u = local_grid(u_c, cfg.grid_shape, cfg.grid_extent)
    starts = np.vstack([chart.to_ambient(grid_u), np.asarray(x, dtype=float)[None, :]])
    G = starts.shape[0]
    ens = ensemble_bursts(starts, cfg.n_traj, cfg.burst_duration, cfg.sampler, objective.energy,
                          seed=child_seed(seed, "grid-iter", index), label="grid-burst")
    evals = sum(e.eval_count for e in ens)
    ends = np.concatenate([e.ends for e in ens])
    data = np.vstack([starts, ends])
    emb = diffusion_map(data, k=4, eps_method=cfg.eps_method, eps_k=cfg.eps_k)
    cols = select_coordinates(emb, 2)
    psi = emb.coords[:, [c - 1 for c in cols]]
    psi_start = psi[:G]
    psi_ends = psi[G:].reshape(G, cfg.n_traj, 2)
    drift = np.empty((G, 2))
    for g in range(G):
        drift[g] = estimate_stat(psi_start[g], psi_ends[g], cfg.burst_duration).drift
    fld = fit_coeff_surface(psi_start[:-1], {"theta1": drift[:-1, 0], "theta2": drift[:-1, 1]},
                            degree=cfg.surface_degree, mask_rule=None)
    f1, f2 = fld.fits["theta1"], fld.fits["theta2"]

    def field_fn(p):
        return np.array([f1(p)[0], f2(p)[0]])

    pc = psi_start[-1]
    g_c = field_fn(pc)
    var = np.array([f1.variance_at(pc)[0], f2.variance_at(pc)[0]])
    chi = float(np.sum(g_c ** 2 / np.maximum(var, 1e-300)))
    hull = Hull(psi_start[:-1], cfg.hull_margin)
    t = cfg.t_ode
    path, n_in = integrate_drift(field_fn, pc, t, cfg.ode_steps, hull)
    shrinks = 0
    while n_in == 0 and shrinks < cfg.max_shrinks:
        t *= 0.5
        shrinks += 1
        path, n_in = integrate_drift(field_fn, pc, t, cfg.ode_steps, hull)
    it = GridIteration(grid_u, starts[:-1], data, psi, psi_start[:-1], pc, fld, g_c, chi,
                       path[:n_in + 1], t * n_in / cfg.ode_steps, emb.kernel.epsilon,
                       emb.eigenvalues, cols)
    return it, evals


def lift(psi, data, query, n_train: int, delta: float, seed: int, epsilon="auto"):
    """Geometric-harmonics lift of ``query`` from a subsample of ``(psi, data)``."""
    m = psi.shape[0]
    idx = np.arange(m)
    if m > n_train:
        idx = np.sort(substream(seed, "gh-train", 0).choice(m, size=n_train, replace=False))
    model = gh_fit(psi[idx], data[idx], epsilon=epsilon, delta=delta)
    x_new, extrap = gh_extend(model, query)
    return x_new, extrap


def run_grid(cfg: OuterConfig, objective: Objective, start, seed: int,
             chart: Chart = PLANE) -> RunHistory:
    """Grid-based reduced gradient descent in a 2D diffusion-map embedding.

    Stops as ``converged`` once the fitted drift at the current point is
    below ``cfg.tol`` in norm or statistically indistinguishable from zero
    (chi-square test at the 95% level on the fitted-surface variance).
    """
    x = np.asarray(start, dtype=float)
    sgn = _sign(objective)
    hist = RunHistory(start=x.copy(), maximize=objective.maximize)
    f0 = float(objective(x))
    hist.evals = 1
    hist.observe([f0], [1])
    crit = chi2.ppf(0.95, 2)
    for it in range(cfg.n_coarse_iters):
        step, used = grid_iteration(cfg, objective, x, chart, seed, it, hist.evals)
        hist.evals += used
        # burst values are not tracked point by point here; the lifted points carry the trace
        info = {"drift_center": step.drift_center.tolist(), "chi2": step.chi2_center,
                "t_used": step.t_used, "coords": step.coords_used}
        if np.linalg.norm(step.drift_center) < cfg.tol or step.chi2_center < crit:
            hist.records.append(IterRecord(x.copy(), step.data.shape[0], step.data.mean(0),
                                           float(step.data.std(0).sum()), step.epsilon,
                                           step.eigenvalues, x.copy(), float(objective(x)),
                                           hist.evals + 1, info))
            hist.evals += 1
            hist.status = CONVERGED
            return hist
        x_new, extrap = lift(step.psi, step.data, step.path[-1], cfg.gh_train, cfg.gh_delta,
                             child_seed(seed, "grid-lift", it), cfg.gh_epsilon)
        info["extrapolated"] = bool(extrap)
        f_new = float(objective(x_new))
        hist.evals += 1
        hist.observe([f_new], [hist.evals])
        hist.records.append(IterRecord(x.copy(), step.data.shape[0], step.data.mean(0),
                                       float(step.data.std(0).sum()), step.epsilon, step.eigenvalues,
                                       x_new.copy(), f_new, hist.evals, info))
        x = x_new
    hist.status = ITER_LIMIT
    return hist
