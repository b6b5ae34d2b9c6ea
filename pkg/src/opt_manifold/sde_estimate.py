"""Local drift/diffusion estimates and polynomial coefficient surfaces.

Two estimators of ``dx = h dt + s dW`` from increments over a step ``dt``:

* ``estimate_stat`` -- the short-time moment definitions,
  ``h = <dx>/dt`` and ``s^2 = <dx^2>/dt`` (raw second moment by default).
* ``estimate_gmm`` -- exactly identified method of moments on the
  Euler-Maruyama conditions ``E[dx - h dt] = 0`` and
  ``E[(dx - h dt)^2 - s^2 dt] = 0``.

Both give the same drift.  With the GMM residual averaged over n (not
n - 1), the diffusions are related exactly by
``s2_stat(raw) = s2_gmm + h^2 dt``; the centered ``estimate_stat``
coincides with GMM on a single step.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericalError

MONOMIALS_2D = {1: [(0, 0), (1, 0), (0, 1)],
                2: [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]}


@dataclass
class CoeffEstimate:
    drift: np.ndarray
    diffusion: np.ndarray                 # s, not s^2
    n_samples: int
    drift_stderr: np.ndarray | None = None
    clamped: bool = False

    def __post_init__(self):
        self.drift = np.atleast_1d(np.asarray(self.drift, dtype=float))
        self.diffusion = np.atleast_1d(np.asarray(self.diffusion, dtype=float))
        if np.any(self.diffusion < 0):
            raise ContractError("diffusion estimates must be nonnegative")
        if self.n_samples < 2:
            raise ContractError("need at least 2 samples")


def estimate_stat(x0, x1, delta_t: float, centered: bool = False) -> CoeffEstimate:
    """Moment estimates from ensemble increments ``x1 - x0`` over ``delta_t``.

    ``x1`` is ``(N, d)`` (or ``(N,)``); ``x0`` broadcasts against it.
    """
    x1 = np.asarray(x1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x1.ndim == 1:
        x1 = x1[:, None]
        if x0.ndim == 1:
            x0 = x0[:, None]
    n = x1.shape[0]
    if n < 2:
        raise ContractError("estimate_stat needs at least 2 trajectories")
    dx = x1 - x0
    h = dx.mean(axis=0) / delta_t
    if centered:
        s2 = dx.var(axis=0) / delta_t
    else:
        s2 = (dx ** 2).mean(axis=0) / delta_t
    se = dx.std(axis=0, ddof=1) / np.sqrt(n) / delta_t
    return CoeffEstimate(h, np.sqrt(s2), n, se)


def estimate_gmm(series, dt: float) -> CoeffEstimate:
    """Method-of-moments fit of ``dx = h dt + s dW`` to fixed-step series.

    ``series`` is ``(N, K+1)`` or ``(N, K+1, d)``; all ``N*K`` increments are pooled.
    """
    S = np.asarray(series, dtype=float)
    if S.ndim == 1:
        S = S[None, :]
    if S.ndim == 2:
        S = S[..., None]
    if S.shape[1] < 2:
        raise ContractError("each series needs at least two points")
    dx = np.diff(S, axis=1).reshape(-1, S.shape[2])
    n = dx.shape[0]
    if n < 2:
        raise ContractError("estimate_gmm needs at least 2 increments")
    h = dx.mean(axis=0) / dt
    resid2 = ((dx - h * dt) ** 2).mean(axis=0)
    s2 = resid2 / dt
    clamped = bool(np.any(s2 < 0))
    if clamped:
        warnings.warn("negative variance residual clamped to zero")
        s2 = np.maximum(s2, 0.0)
    se = dx.std(axis=0, ddof=1) / np.sqrt(n) / dt
    return CoeffEstimate(h, np.sqrt(s2), n, se, clamped)


# ---------------------------------------------------------------------------
# polynomial fits

@dataclass
class PolyFit:
    powers: list
    coefficients: np.ndarray
    stderr: np.ndarray
    residual_std: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return sum(c * x ** p for c, p in zip(self.coefficients, self.powers))

    def coefficient(self, power) -> float:
        return float(self.coefficients[self.powers.index(power)])


def _lstsq_with_errors(A, y, names):
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[-1] <= max(A.shape) * np.finfo(float).eps * s[0]:
        direction = " + ".join(f"{v:.3g}*{nm}" for v, nm in zip(vt[-1], names) if abs(v) > 1e-6)
        raise NumericalError(f"rank-deficient design; degenerate direction: {direction}")
    coef = vt.T @ ((u.T @ y) / s)
    dof = A.shape[0] - A.shape[1]
    resid = y - A @ coef
    sigma2 = float(resid @ resid / dof) if dof > 0 else 0.0
    cov = (vt.T / s ** 2) @ vt * sigma2
    return coef, np.sqrt(np.clip(np.diag(cov), 0.0, None)), np.sqrt(sigma2)


def fit_polynomial_1d(xs, ys, basis) -> PolyFit:
    """Least squares on the given monomial powers only (e.g. ``[1, 3]`` for ``a x + b x^3``)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    basis = list(basis)
    if xs.size < len(basis):
        raise ContractError(f"need at least {len(basis)} points, got {xs.size}")
    A = np.stack([xs ** p for p in basis], axis=1)
    coef, se, rs = _lstsq_with_errors(A, ys, [f"x^{p}" for p in basis])
    return PolyFit(basis, coef, se, rs)


@dataclass
class SurfaceFit:
    degree: int
    coefficients: np.ndarray      # ordered as MONOMIALS_2D[degree]
    stderr: np.ndarray
    cov: np.ndarray

    @property
    def named(self) -> dict:
        return {f"p{a}{b}": float(c) for (a, b), c in zip(MONOMIALS_2D[self.degree], self.coefficients)}

    def design(self, coords):
        c = np.atleast_2d(np.asarray(coords, dtype=float))
        return np.stack([c[:, 0] ** a * c[:, 1] ** b for a, b in MONOMIALS_2D[self.degree]], axis=1)

    def __call__(self, coords):
        return self.design(coords) @ self.coefficients

    def gradient(self, coords):
        c = np.atleast_2d(np.asarray(coords, dtype=float))
        g = np.zeros_like(c)
        for (a, b), p in zip(MONOMIALS_2D[self.degree], self.coefficients):
            if a:
                g[:, 0] += p * a * c[:, 0] ** (a - 1) * c[:, 1] ** b
            if b:
                g[:, 1] += p * b * c[:, 0] ** a * c[:, 1] ** (b - 1)
        return g

    def variance_at(self, coords):
        A = self.design(coords)
        return np.einsum("ij,jk,ik->i", A, self.cov, A)


def fit_surface(coords, values, degree: int = 1) -> SurfaceFit:
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    if degree not in MONOMIALS_2D:
        raise ContractError("surface degree must be 1 or 2")
    mons = MONOMIALS_2D[degree]
    if coords.shape[0] < len(mons):
        raise ContractError(f"need at least {len(mons)} points for a degree-{degree} fit")
    A = np.stack([coords[:, 0] ** a * coords[:, 1] ** b for a, b in mons], axis=1)
    names = [f"psi1^{a}*psi2^{b}" for a, b in mons]
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    coef, se, rs = _lstsq_with_errors(A, values, names)
    cov = (vt.T / s ** 2) @ vt * rs ** 2
    return SurfaceFit(degree, coef, se, cov)


def relative_mask(values, fraction: float = 0.05):
    """Keep points whose magnitude is at least ``fraction`` of the median magnitude."""
    a = np.abs(np.asarray(values, dtype=float))
    return a >= fraction * np.median(a)


@dataclass
class CoeffField:
    grid_coords: np.ndarray                  # (G, 2) embedding coordinates
    estimates: dict                          # name -> (G,) values
    mask: np.ndarray                         # (G,) retained flags
    fits: dict = field(default_factory=dict)  # name -> SurfaceFit

    def __post_init__(self):
        G = self.grid_coords.shape[0]
        if self.mask.shape[0] != G or any(np.shape(v)[0] != G for v in self.estimates.values()):
            raise ContractError("grid coordinates, estimates and mask must have equal length")

    def evaluate(self, name, coords):
        return self.fits[name](coords)


def fit_coeff_surface(grid_coords, estimates: dict, degree: int = 1, mask_rule="relative",
                      fraction: float = 0.05) -> CoeffField:
    """Fit one polynomial surface per coefficient over the masked-in grid points.

    ``mask_rule="relative"`` drops a point if any coefficient magnitude there
    is below ``fraction`` of that coefficient's grid median; ``None`` keeps
    every point; an explicit boolean array is used as given.
    """
    coords = np.asarray(grid_coords, dtype=float)
    est = {k: np.asarray(v, dtype=float) for k, v in estimates.items()}
    if mask_rule is None:
        mask = np.ones(coords.shape[0], dtype=bool)
    elif isinstance(mask_rule, str):
        if mask_rule != "relative":
            raise ContractError(f"unknown mask rule {mask_rule!r}")
        mask = np.ones(coords.shape[0], dtype=bool)
        for v in est.values():
            mask &= relative_mask(v, fraction)
    else:
        mask = np.asarray(mask_rule, dtype=bool)
    fld = CoeffField(coords, est, mask)
    for name, v in est.items():
        fld.fits[name] = fit_surface(coords[mask], v[mask], degree)
    return fld
