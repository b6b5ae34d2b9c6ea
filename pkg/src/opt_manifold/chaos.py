"""A slow variable driven by a sped-up Lorenz system, seen through diffusion maps.

The slow variable obeys ``dx/dt = A(x - x^3) + (lambda/eps)(1 + nu x^2) y_2``
where ``y`` is a Lorenz-63 state running on the ``1/eps^2`` time scale.  For
small ``eps`` the chaotic forcing acts like white noise and ``x`` follows an
effective SDE.  This module simulates burst ensembles, estimates the
effective coefficients in ``x``, embeds the data with a Mahalanobis
diffusion map and compares three routes to the coefficients of the
embedded coordinate ``psi(x)``.

The Lorenz part is stiff at ``eps^2 = 1e-3``: the fastest linear rate on the
attractor is about ``2e4``, beyond the RK4 stability limit at a step of
``1e-3``.  ``integrate_system`` therefore subdivides each recorded step.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .dmaps import (MAHALANOBIS, KernelSpec, align_to, covariance_of_endpoints, dmaps_embed,
                    epsilon_heuristic, make_semicircle_map, pairwise_sq_distances,
                    svd_pseudo_inverse)
from .errors import ContractError, DegeneracyError, NumericalError
from .ito_transport import ito_1d, spline_derivatives
from .rng import substream
from .sampler import Trajectory
from .sde_estimate import estimate_gmm, fit_polynomial_1d

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"
Y_BOX = 100.0          # divergence guard for the Lorenz sub-state


@dataclass(frozen=True)
class LorenzParams:
    A: float = 1.0
    lam: float = 2.0 / 45.0
    eps: float = float(np.sqrt(0.001))
    nu: float = 0.0
    dt_sim: float = 1e-3
    Dt_burst: float = 0.03
    substeps: int = 100

    def __post_init__(self):
        if not self.eps > 0:
            raise ContractError("lorenz.eps must be positive")
        if not 0 < self.dt_sim < self.Dt_burst:
            raise ContractError("need 0 < lorenz.dt_sim < lorenz.Dt_burst")
        if self.substeps < 1:
            raise ContractError("lorenz.substeps must be >= 1")

    @classmethod
    def for_mode(cls, mode: str, **kw):
        if mode == ADDITIVE:
            return cls(**kw)
        if mode == MULTIPLICATIVE:
            kw.setdefault("nu", 1.0)
            kw.setdefault("Dt_burst", 0.01)
            return cls(**kw)
        raise ContractError(f"unknown noise mode {mode!r}")


@dataclass(frozen=True)
class ChaosSpec:
    n_starts: int = 20
    x_range: tuple = (-1.5, 1.5)
    n_traj: int = 500
    n_cov: int = 100
    dt_cov: float = 1e-4
    relax_time: float = 0.1
    deriv_offset: float = 0.05      # fraction of the start spacing
    eps_k: int = 10                 # kernel scale: median distance to this neighbour
    eps_scale: float = 1.0
    central: float = 0.8            # fraction of the x-range used for route comparison
    y_start: str = "shared"         # "shared": y0 + z for every burst; "stationary": see simulate
    decorrelate: float = 0.01       # relaxation time of each burst's own y in "stationary" mode
    smoothing: object = "bandwidth"  # spline penalty: "bandwidth", "gcv" or a number

    def __post_init__(self):
        if self.n_starts < 2 or self.n_traj < 2 or self.n_cov < 2:
            raise ContractError("chaos counts must be >= 2")
        if not self.x_range[0] < self.x_range[1]:
            raise ContractError("chaos.x_range must be increasing")
        if not (self.dt_cov > 0 and self.relax_time > 0 and self.deriv_offset > 0):
            raise ContractError("chaos durations and offsets must be positive")
        if not 0 < self.central <= 1:
            raise ContractError("chaos.central must lie in (0, 1]")
        if self.y_start not in ("shared", "stationary"):
            raise ContractError(f"chaos.y_start must be shared or stationary, got {self.y_start!r}")
        if not (self.eps_k >= 1 and self.eps_scale > 0):
            raise ContractError("chaos.eps_k must be >= 1 and chaos.eps_scale positive")

    @classmethod
    def for_mode(cls, mode: str, **kw):
        """Defaults per noise mode.

        Multiplicative bursts are a third as long, so each start's endpoint
        cloud no longer reaches its neighbours at the nearest-neighbour
        kernel scale and the graph falls apart into per-start clusters.  A
        five times wider kernel reconnects them.
        """
        if mode == MULTIPLICATIVE:
            kw.setdefault("eps_scale", 5.0)
        elif mode != ADDITIVE:
            raise ContractError(f"unknown noise mode {mode!r}")
        return cls(**kw)

    @property
    def starts(self):
        return np.linspace(*self.x_range, self.n_starts)

    @property
    def spacing(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / (self.n_starts - 1)


def _rhs(s, p: LorenzParams):
    x, y1, y2, y3 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    ie2 = 1.0 / p.eps ** 2
    out = np.empty_like(s)
    out[..., 0] = p.A * (x - x ** 3) + (p.lam / p.eps) * (1.0 + p.nu * x * x) * y2
    out[..., 1] = 10.0 * ie2 * (y2 - y1)
    out[..., 2] = ie2 * (28.0 * y1 - y2 - y1 * y3)
    out[..., 3] = ie2 * (y1 * y2 - (8.0 / 3.0) * y3)
    return out


def _rk4(s, h, p):
    k1 = _rhs(s, p)
    k2 = _rhs(s + 0.5 * h * k1, p)
    k3 = _rhs(s + 0.5 * h * k2, p)
    k4 = _rhs(s + h * k3, p)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_system(state, params: LorenzParams, duration: float, dt: float | None = None,
                     record: bool = True) -> Trajectory:
    """Fixed-step RK4 for the coupled system; ``state`` is ``(..., 4)``.

    States are recorded every ``dt`` (default ``params.dt_sim``).  The RK4
    step is ``dt_sim / substeps``, rounded so it divides ``dt``.  With
    ``record=False`` only the start and end are kept.
    """
    s = np.array(state, dtype=float)
    if s.shape[-1] != 4:
        raise ContractError("state must have 4 components (x, y1, y2, y3)")
    dt = params.dt_sim if dt is None else dt
    n = int(round(duration / dt))
    if n < 1:
        raise ContractError(f"duration {duration} is shorter than one step {dt}")
    per = max(1, int(round(dt * params.substeps / params.dt_sim)))
    h = dt / per
    states = [s.copy()]
    for k in range(n):
        for _ in range(per):
            s = _rk4(s, h, params)
        if not np.all(np.isfinite(s)) or np.abs(s[..., 1:]).max() > Y_BOX:
            raise NumericalError(f"integration diverged at recorded step {k + 1} (h={h:g}); "
                                 "increase lorenz.substeps")
        if record or k == n - 1:
            states.append(s.copy())
    times = dt * np.arange(n + 1) if record else np.array([0.0, n * dt])
    return Trajectory(times=times, states=np.asarray(states))


def relax_to_attractor(params: LorenzParams, duration: float = 0.1):
    """Lorenz state after ``duration`` from ``(1, 1, 1, 1)``."""
    return integrate_system(np.ones(4), params, duration, record=False).end[1:]


def make_initial_conditions(spec: ChaosSpec, y0, rng: np.random.Generator, n: int | None = None,
                            centers=None):
    """Perturbed initial conditions, ``(len(centers), n, 4)``.

    ``x_ic = x0 + 0.01 (spacing/2) z`` and ``y_ic = y0 + z`` with fresh
    standard normals ``z`` per component.
    """
    centers = spec.starts if centers is None else np.atleast_1d(np.asarray(centers, dtype=float))
    n = spec.n_traj if n is None else n
    z = rng.standard_normal((centers.size, n, 4))
    ic = np.empty_like(z)
    ic[..., 0] = centers[:, None] + 0.01 * (spec.spacing / 2.0) * z[..., 0]
    ic[..., 1:] = np.asarray(y0, dtype=float) + z[..., 1:]
    return ic


def _perturb(points, spec: ChaosSpec, z):
    ic = points[:, None, :] + z
    ic[..., 0] = points[:, None, 0] + 0.01 * (spec.spacing / 2.0) * z[..., 0]
    return ic


def cov_burst_endpoints(points, spec: ChaosSpec, params: LorenzParams, rng, chunk: int = 2000):
    """``(m, n_cov, 4)`` endpoints of short bursts from perturbed copies of each point."""
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    out = np.empty((m, spec.n_cov, 4))
    for a in range(0, m, chunk):
        b = min(m, a + chunk)
        z = rng.standard_normal((b - a, spec.n_cov, 4))
        ic = _perturb(points[a:b], spec, z)
        out[a:b] = integrate_system(ic, params, spec.dt_cov, dt=spec.dt_cov, record=False).end
    return out


@dataclass
class RouteComparison:
    x: np.ndarray                # start points
    psi0: np.ndarray             # psi at the start points (spline value)
    direct: np.ndarray
    plugin_fit: np.ndarray       # from the fitted polynomial coefficients
    plugin_point: np.ndarray     # from the per-start x-space estimates
    central: np.ndarray          # mask of the central part of the range

    def deviation(self, which: str = "plugin_fit") -> float:
        """RMS relative deviation ``||a - b|| / ||b||`` over the central points."""
        a = self.direct[self.central]
        b = getattr(self, which)[self.central]
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@dataclass
class ChaosReport:
    mode: str
    transform: str | None
    x_starts: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray           # diffusion (standard deviation rate)
    drift_fit: object
    diff_fit: object
    coefficients: dict
    data_x: np.ndarray           # slow variable of every embedded point
    psi: np.ndarray              # psi_1 of every embedded point
    epsilon: float
    eigenvalues: np.ndarray
    spearman: float
    drift: RouteComparison | None = None
    diffusion: RouteComparison | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class ChaosData:
    """Simulated bursts plus the assembled data set (before embedding)."""
    spec: ChaosSpec
    params: LorenzParams
    y0: np.ndarray
    ics: np.ndarray              # (S, N, 4)
    ends: np.ndarray             # (S, N, 4)
    points: np.ndarray           # (m, 4): starts, endpoints, derivative points
    x_of_point: np.ndarray       # (m,)
    cov_ends: np.ndarray         # (m, n_cov, 4)
    n_starts: int
    n_ends: int


def simulate(spec: ChaosSpec, params: LorenzParams, seed: int) -> ChaosData:
    """Relaxation, burst ensembles, derivative points and covariance bursts.

    With ``spec.y_start == "shared"`` every burst starts from ``y0 + z``.
    All bursts of all starts then carry the same memory of ``y0`` for the
    first few Lorenz time units, which shifts every drift estimate by a
    common amount.  ``"stationary"`` first relaxes each perturbed ``y``
    for ``spec.decorrelate`` so the burst starts sample the attractor.
    """
    y0 = relax_to_attractor(params, spec.relax_time)
    ics = make_initial_conditions(spec, y0, substream(seed, "chaos-ic", 0))
    S, N = ics.shape[:2]
    if spec.y_start == "stationary":
        # every burst gets its own attractor state, so the bursts of one start
        # share no transient memory of y0
        relaxed = integrate_system(ics.reshape(-1, 4), params, spec.decorrelate, record=False).end
        ics[..., 1:] = relaxed[:, 1:].reshape(S, N, 3)
    ends = integrate_system(ics.reshape(-1, 4), params, params.Dt_burst, record=False).end
    ends = ends.reshape(S, N, 4)
    x0 = spec.starts
    h = spec.deriv_offset * spec.spacing
    starts = np.column_stack([x0, np.tile(y0, (S, 1))])
    dplus, dminus = starts.copy(), starts.copy()
    dplus[:, 0] += h
    dminus[:, 0] -= h
    points = np.vstack([starts, ends.reshape(-1, 4), dplus, dminus])
    cov_ends = cov_burst_endpoints(points, spec, params, substream(seed, "chaos-cov", 0))
    return ChaosData(spec, params, y0, ics, ends, points, points[:, 0].copy(), cov_ends, S, S * N)


def x_space_estimates(data: ChaosData):
    """Per-start GMM on ``(x_ic, x_end)`` pairs; returns ``(theta1, theta2)``."""
    Dt = data.params.Dt_burst
    th1 = np.empty(data.n_starts)
    th2 = np.empty(data.n_starts)
    for i in range(data.n_starts):
        pairs = np.stack([data.ics[i, :, 0], data.ends[i, :, 0]], axis=1)
        est = estimate_gmm(pairs, Dt)
        th1[i], th2[i] = est.drift[0], est.diffusion[0]
    return th1, th2


def fit_effective(x0, theta1, theta2, mode: str):
    """Polynomial fits of drift and squared diffusion in ``x``."""
    if mode == ADDITIVE:
        dfit = fit_polynomial_1d(x0, theta1, [1, 3])
        sfit = fit_polynomial_1d(x0, theta2 ** 2, [0])
        coeffs = {"A": dfit.coefficient(1), "B": dfit.coefficient(3), "sigma": sfit.coefficient(0)}
    else:
        dfit = fit_polynomial_1d(x0, theta1, [1, 3, 5])
        sfit = fit_polynomial_1d(x0, theta2 ** 2, [0, 2, 4])
        coeffs = {"A": dfit.coefficient(1), "B": dfit.coefficient(3), "C": dfit.coefficient(5),
                  "sigma_a": sfit.coefficient(0), "sigma_b": sfit.coefficient(2),
                  "sigma_c": sfit.coefficient(4)}
    return dfit, sfit, coeffs


def parity_check(x0, theta1, mode: str):
    """Refit the drift with the even powers added; returns ``{power: |c| / stderr}``."""
    basis = [0, 1, 2, 3] if mode == ADDITIVE else [0, 1, 2, 3, 4, 5]
    fit = fit_polynomial_1d(x0, theta1, basis)
    return {p: abs(c) / s for p, c, s in zip(fit.powers, fit.coefficients, fit.stderr) if p % 2 == 0}


def ambient(points, transform):
    """Apply the observation map to the slow variable (first column)."""
    if transform is None:
        return points
    if transform != "semicircle":
        raise ContractError(f"unknown transform {transform!r}")
    f = make_semicircle_map()
    x = points[..., 0]
    return np.concatenate([f(x), points[..., 1:]], axis=-1)


def embed(data: ChaosData, transform=None, rank_d: int | None = None, k: int = 3):
    """Mahalanobis diffusion map of the data set; returns ``(Embedding, epsilon)``."""
    Y = ambient(data.points, transform)
    Cends = ambient(data.cov_ends, transform)
    n = Y.shape[1]
    rank_d = (4 if transform is None else n - 1) if rank_d is None else rank_d
    C = covariance_of_endpoints(Cends)
    P = svd_pseudo_inverse(C, rank_d)
    D = pairwise_sq_distances(Y, MAHALANOBIS, P)
    eps = epsilon_heuristic(sq_distances=D, method="knn", k=data.spec.eps_k, scale=data.spec.eps_scale)
    spec = KernelSpec(eps, 1.0, MAHALANOBIS)
    D *= -1.0 / eps ** 2
    np.exp(D, out=D)
    emb = dmaps_embed(D, alpha=1.0, k=k, kernel=spec, overwrite=True)
    return emb, eps


def _central_mask(x0, frac):
    lo, hi = x0.min(), x0.max()
    c, w = 0.5 * (lo + hi), 0.5 * (hi - lo) * frac
    return np.abs(x0 - c) <= w + 1e-12


def bandwidth_penalty(xs, bandwidth: float) -> float:
    """Spline penalty whose equivalent kernel has the given bandwidth.

    A cubic smoothing spline with penalty ``lam`` on data of density ``rho``
    (points per unit ``x``) acts like a kernel smoother of bandwidth
    ``(lam / rho)^(1/4)``.
    """
    xs = np.asarray(xs, dtype=float)
    rho = xs.size / np.ptp(xs)
    return float(rho * bandwidth ** 4)


def resolve_smoothing(data: ChaosData, smoothing):
    """Turn the configured smoothing rule into a penalty (``None`` means GCV)."""
    if smoothing == "gcv" or smoothing is None:
        return None
    if smoothing == "bandwidth":
        # the direct estimates average psi over the burst spread, so the
        # derivatives are taken at that scale too
        h = float(np.sqrt(np.mean((data.ends[..., 0] - data.ics[..., 0]) ** 2)))
        return bandwidth_penalty(data.x_of_point, h)
    lam = float(smoothing)
    if not lam > 0:
        raise ContractError("chaos.smoothing must be positive, 'gcv' or 'bandwidth'")
    return lam


def compare_routes(data: ChaosData, psi, theta1, theta2, dfit, sfit, smoothing=None):
    """Direct psi-space GMM estimates versus the two Ito plug-in routes.

    ``psi`` holds the embedded coordinate of every data point (sign already
    oriented so that it increases with ``x``).
    """
    spec = data.spec
    x0 = spec.starts
    S, N = data.n_starts, data.spec.n_traj
    lam = resolve_smoothing(data, smoothing)
    d1, d2, spl = spline_derivatives(data.x_of_point, psi, query=x0, smoothing=lam)
    psi0 = spl(x0)
    # the burst starts were perturbed in x; read their psi value off the smooth fit
    psi_ic = spl(data.ics[..., 0])
    psi_end = psi[S:S + data.n_ends].reshape(S, N)
    Dt = data.params.Dt_burst
    xi1 = np.empty(S)
    xi2 = np.empty(S)
    for i in range(S):
        est = estimate_gmm(np.stack([psi_ic[i], psi_end[i]], axis=1), Dt)
        xi1[i], xi2[i] = est.drift[0], est.diffusion[0]
    fit_drift, fit_diff = ito_1d(dfit(x0), sfit(x0), d1, d2)
    pt_drift, pt_diff = ito_1d(theta1, theta2 ** 2, d1, d2)
    mask = _central_mask(x0, spec.central)
    drift = RouteComparison(x0, psi0, xi1, fit_drift, pt_drift, mask)
    diff = RouteComparison(x0, psi0, xi2, fit_diff, pt_diff, mask)
    return drift, diff, (d1, d2)


def run_chaos_experiment(spec: ChaosSpec, params: LorenzParams, mode: str, seed: int,
                         transform=None, data: ChaosData | None = None) -> ChaosReport:
    """The whole pipeline for one noise mode (and optional observation transform)."""
    if mode not in (ADDITIVE, MULTIPLICATIVE):
        raise ContractError(f"unknown noise mode {mode!r}")
    data = simulate(spec, params, seed) if data is None else data
    x0 = spec.starts
    th1, th2 = x_space_estimates(data)
    dfit, sfit, coeffs = fit_effective(x0, th1, th2, mode)
    emb, eps = embed(data, transform)
    psi = emb.psi(1).copy()
    rho = spearmanr(data.x_of_point, psi).statistic
    if abs(rho) < 0.9:
        raise DegeneracyError(f"psi_1 does not parameterize the slow variable "
                              f"(Spearman {rho:.3f} with x); embedding failed")
    if rho < 0:
        psi = -psi
    drift, diff, _ = compare_routes(data, psi, th1, th2, dfit, sfit, spec.smoothing)
    return ChaosReport(mode=mode, transform=transform, x_starts=x0, theta1=th1, theta2=th2,
                       drift_fit=dfit, diff_fit=sfit, coefficients=coeffs, data_x=data.x_of_point,
                       psi=psi, epsilon=eps, eigenvalues=emb.eigenvalues, spearman=float(abs(rho)),
                       drift=drift, diffusion=diff,
                       extra={"parity": parity_check(x0, th1, mode)})


def embedding_agreement(psi_a, psi_b) -> float:
    """``|Pearson|`` between two embeddings of the same points after sign alignment."""
    b = align_to(np.asarray(psi_b)[:, None], np.asarray(psi_a)[:, None])[0][:, 0]
    return float(abs(np.corrcoef(psi_a, b)[0, 1]))
