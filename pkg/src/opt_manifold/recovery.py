"""Drift recovery in diffusion-map coordinates for a constant-gradient objective.

Ensembles of RWMH bursts on ``f(x, y) = x + 2y`` start from the nodes of a
rectangular grid.  The data (grid nodes, burst endpoints and the offset
points used for centered differences) are embedded with diffusion maps and
the drift of ``(psi_1, psi_2)`` is estimated at every node and fitted by a
polynomial surface.  The estimates are compared with the drift that Ito's
lemma predicts from the derivatives of the reference embedding.

The same data are also observed on a sphere: the plane coordinates are read
as longitude and latitude, which stretches and bends distances.  A
Mahalanobis kernel built from short covariance bursts undoes the map; a
Euclidean kernel on the mapped data does not, and serves as a negative
control.
"""
from dataclasses import dataclass, field

import numpy as np

from .dmaps import (EUCLIDEAN, MAHALANOBIS, align_to, covariance_of_endpoints, diffusion_map,
                    svd_pseudo_inverse)
from .errors import ContractError
from .ito_transport import centered_derivatives, theoretical_coeffs_2d
from .objectives import make_objective
from .outer_loop import local_grid
from .rng import child_seed, substream
from .sampler import SamplerParams, ensemble_bursts, rwmh_chains
from .sde_estimate import estimate_stat, fit_coeff_surface


@dataclass(frozen=True)
class RecoverySpec:
    shape: tuple = (8, 10)
    limits: tuple = ((0.0, 1.5), (0.0, 1.2))
    n_traj: int = 150
    Dt: float = 0.01
    dt: float = 1e-3
    T: float = 0.2
    deriv_frac: float = 0.05        # offset h as a fraction of the grid spacing
    n_cov: int = 100
    cov_steps: int = 1              # RWMH steps per covariance burst
    cov_dt: float = 1e-5            # step of the covariance bursts
    sphere_span: float = 2.4        # angle (radians) covered by the widest data extent
    sphere_lat: float = 0.5         # latitude of the grid center
    degree: int = 2
    mask_fraction: float = 0.05
    eps_method: str = "median"
    eps_k: int = 10
    eps_scale: float = 0.4          # fraction of the median distance
    tolerance: float = 0.25

    def __post_init__(self):
        SamplerParams(self.T, self.dt)
        if min(self.shape) < 3:
            raise ContractError("recovery grid needs at least 3 nodes per axis")
        if not (self.Dt > self.dt and self.n_traj >= 2 and self.n_cov >= 3):
            raise ContractError("need Dt > dt, n_traj >= 2 and n_cov >= 3")
        if not 0 < self.cov_dt <= self.dt:
            raise ContractError("recovery.cov_dt must lie in (0, dt]")
        if not 0 < self.sphere_span < np.pi:
            raise ContractError("recovery.sphere_span must lie in (0, pi)")

    @property
    def spacing(self):
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.limits, self.shape)])

    @property
    def grid(self):
        center = [0.5 * (lo + hi) for lo, hi in self.limits]
        extent = [hi - lo for lo, hi in self.limits]
        return local_grid(center, self.shape, extent)


@dataclass
class RecoveryData:
    spec: RecoverySpec
    grid: np.ndarray          # (G, 2)
    ends: np.ndarray          # (G, N, 2)
    offsets: np.ndarray       # (G, 4, 2): +x, -x, +y, -y
    points: np.ndarray        # (m, 2) grid, endpoints, offsets
    cov_ends: np.ndarray | None = None   # (m, n_cov, 2) covariance-burst endpoints
    evals: int = 0

    @property
    def G(self):
        return self.grid.shape[0]

    def index(self):
        """Row slices of grid nodes, endpoints and offset points in ``points``."""
        G, N = self.G, self.ends.shape[1]
        return slice(0, G), slice(G, G + G * N), slice(G + G * N, G + G * N + 4 * G)


def simulate(spec: RecoverySpec, seed: int, with_cov: bool = True) -> RecoveryData:
    f = make_objective("linear2d")
    params = SamplerParams(spec.T, spec.dt)
    grid = spec.grid
    ens = ensemble_bursts(grid, spec.n_traj, spec.Dt, params, f.energy,
                          seed=child_seed(seed, "recovery-burst"), label="grid-burst")
    ends = np.stack([e.ends for e in ens])
    evals = sum(e.eval_count for e in ens)
    h = spec.deriv_frac * spec.spacing
    shifts = np.array([[h[0], 0.0], [-h[0], 0.0], [0.0, h[1]], [0.0, -h[1]]])
    offsets = grid[:, None, :] + shifts[None, :, :]
    points = np.vstack([grid, ends.reshape(-1, 2), offsets.reshape(-1, 2)])
    data = RecoveryData(spec, grid, ends, offsets, points, evals=evals)
    if with_cov:
        data.cov_ends, used = covariance_bursts(points, spec, seed)
        data.evals += used
    return data


def covariance_bursts(points, spec: RecoverySpec, seed: int, chunk: int = 4000):
    """Endpoints of ``n_cov`` short RWMH bursts from every point.

    All points share the same noise (common random numbers), so nearby
    points get nearly identical covariance estimates and the centered
    differences of the embedding stay smooth.  The shared noise is whitened
    at every step: a sampling error in its covariance would otherwise bend
    the metric the same way everywhere.  The step is small enough that
    nearly every proposal is accepted.
    """
    f = make_objective("linear2d")
    params = SamplerParams(spec.T, spec.cov_dt)
    rng = substream(seed, "recovery-cov", 0)
    noise = rng.standard_normal((spec.n_cov, spec.cov_steps, 2))
    for j in range(spec.cov_steps):
        z = noise[:, j] - noise[:, j].mean(0)
        L = np.linalg.cholesky(np.cov(z.T))
        noise[:, j] = np.linalg.solve(L, z.T).T
    logu = np.log(rng.random((spec.n_cov, spec.cov_steps)))
    m = points.shape[0]
    out = np.empty((m, spec.n_cov, 2))
    for a in range(0, m, chunk):
        b = min(m, a + chunk)
        x0 = np.repeat(points[a:b], spec.n_cov, axis=0)
        nz = np.tile(noise, (b - a, 1, 1))
        lu = np.tile(logu, (b - a, 1))
        paths, _, _ = rwmh_chains(x0, params, f.energy, nz, lu)
        out[a:b] = paths[:, -1].reshape(b - a, spec.n_cov, 2)
    return out, m * spec.n_cov * (spec.cov_steps + 1)


def sphere_map(points, center, scale, lat0: float = 0.0):
    """Read planar offsets from ``center`` (times ``scale``) as longitude and latitude.

    ``lat0`` moves the patch toward a pole, where longitude is squeezed most.
    """
    u = (np.asarray(points, dtype=float) - center) * scale
    lon, lat = u[..., 0], u[..., 1] + lat0
    if np.any(np.abs(lat) >= 0.5 * np.pi):
        raise ContractError("latitude beyond the poles; reduce the sphere span")
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)], axis=-1)


def sphere_for(data: RecoveryData):
    """Center and angular scale of the sphere map for this data set."""
    c = data.grid.mean(0)
    pts = data.points if data.cov_ends is None else np.vstack([data.points, data.cov_ends.reshape(-1, 2)])
    extent = float(np.abs(pts - c).max()) * 2.0
    return c, data.spec.sphere_span / extent


@dataclass
class DriftRecovery:
    label: str
    psi: np.ndarray                 # (m, 2), aligned to the reference
    estimates: np.ndarray           # (G, 2) per-node drift estimates
    fitted: np.ndarray              # (G, 2) fitted surface at the nodes
    mask: np.ndarray
    epsilon: float
    field: object = None
    diffusion: np.ndarray | None = None     # (G, 2) per-node diffusion estimates
    rel_err: np.ndarray | None = None     # (G, 2) against the reference
    median_rel_err: tuple = ()

    def passes(self, tol: float) -> bool:
        return bool(max(self.median_rel_err) <= tol)


@dataclass
class Reference:
    psi: np.ndarray
    theta: np.ndarray               # (G, 4): theta1..theta4
    derivs: tuple


def embed(data: RecoveryData, view: str, metric: str):
    """Embedding of the data seen through ``view`` ("plane" or "sphere")."""
    spec = data.spec
    if view == "plane":
        Y = data.points
        covs = data.cov_ends
    elif view == "sphere":
        c, scale = sphere_for(data)
        Y = sphere_map(data.points, c, scale, spec.sphere_lat)
        covs = sphere_map(data.cov_ends, c, scale, spec.sphere_lat) if data.cov_ends is not None else None
    else:
        raise ContractError(f"unknown view {view!r}")
    P = None
    if metric == MAHALANOBIS:
        if covs is None:
            raise ContractError("Mahalanobis embedding needs covariance bursts")
        P = svd_pseudo_inverse(covariance_of_endpoints(covs), 2)
    emb = diffusion_map(Y, k=4, metric=metric, covs=P, eps_method=spec.eps_method,
                        eps_k=spec.eps_k, eps_scale=spec.eps_scale)
    return emb


def reference(data: RecoveryData, emb) -> Reference:
    """Ito drift/diffusion at the nodes from centered differences of ``emb``."""
    gs, _, os_ = data.index()
    psi = emb.coords[:, :2]
    h = data.spec.deriv_frac * data.spec.spacing
    off = psi[os_].reshape(data.G, 4, 2)
    d = []
    for j in range(2):
        c = psi[gs, j]
        plus = np.column_stack([off[:, 0, j], off[:, 2, j]])
        minus = np.column_stack([off[:, 1, j], off[:, 3, j]])
        d.append(centered_derivatives(c, plus, minus, h))
    # minimizing x + 2y: drift is -grad f
    th = theoretical_coeffs_2d(-1.0, -2.0, data.spec.T, d[0], d[1])
    return Reference(psi, np.column_stack(th), tuple(d))


def estimate(data: RecoveryData, psi, label: str, epsilon: float, ref: Reference | None = None):
    """Per-node drift estimates in ``psi`` and their fitted surfaces."""
    spec = data.spec
    gs, es, _ = data.index()
    G, N = data.G, data.ends.shape[1]
    p_grid = psi[gs]
    p_end = psi[es].reshape(G, N, 2)
    ests = [estimate_stat(p_grid[g], p_end[g], spec.Dt) for g in range(G)]
    est = np.array([e.drift for e in ests])
    fld = fit_coeff_surface(p_grid, {"theta1": est[:, 0], "theta2": est[:, 1]},
                            degree=spec.degree, mask_rule="relative", fraction=spec.mask_fraction)
    fitted = np.column_stack([fld.fits["theta1"](p_grid), fld.fits["theta2"](p_grid)])
    out = DriftRecovery(label, psi, est, fitted, fld.mask, epsilon, fld,
                        np.array([e.diffusion for e in ests]))
    if ref is not None:
        theo = ref.theta[:, :2]
        out.rel_err = np.abs(fitted - theo) / np.abs(theo)
        out.median_rel_err = tuple(float(np.median(out.rel_err[fld.mask, j])) for j in range(2))
    return out


@dataclass
class RecoveryReport:
    reference: Reference
    euclid_plane: DriftRecovery
    mahal_sphere: DriftRecovery
    euclid_sphere: DriftRecovery
    evals: int
    extra: dict = field(default_factory=dict)


def run_recovery(spec: RecoverySpec, seed: int, data: RecoveryData | None = None) -> RecoveryReport:
    data = simulate(spec, seed) if data is None else data
    e_plane = embed(data, "plane", EUCLIDEAN)
    ref = reference(data, e_plane)
    runs = []
    for label, view, metric, emb in [("euclidean/plane", "plane", EUCLIDEAN, e_plane),
                                     ("mahalanobis/sphere", "sphere", MAHALANOBIS, None),
                                     ("euclidean/sphere", "sphere", EUCLIDEAN, None)]:
        emb = emb if emb is not None else embed(data, view, metric)
        psi = emb.coords[:, :2] if emb is e_plane else align_to(emb.coords, ref.psi)[0]
        runs.append(estimate(data, psi, label, emb.kernel.epsilon, ref))
    return RecoveryReport(ref, *runs, evals=data.evals)
