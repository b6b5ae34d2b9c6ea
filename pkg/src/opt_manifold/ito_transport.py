"""Expected SDE coefficients of diffusion coordinates via Ito's lemma.

If ``x`` follows ``dx = b dt + s dW`` and ``psi`` is a smooth function of
``x``, then ``dpsi = (b psi' + s^2/2 psi'') dt + s |psi'| dW``.  The
derivatives of ``psi`` come either from centered differences at offset
points that were embedded together with the data, or from a smoothing
spline fit of ``psi`` against ``x``.
"""
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_smoothing_spline

from .errors import ContractError, NumericalError


@dataclass
class CoordDerivatives:
    first: np.ndarray        # (G, d): d psi / d x_a
    second: np.ndarray       # (G, d): d^2 psi / d x_a^2
    spacing: np.ndarray      # (d,)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.first)) and np.all(np.isfinite(self.second))):
            raise ContractError("derivatives must be finite")
        if np.any(np.asarray(self.spacing) <= 0):
            raise ContractError("spacing must be positive")


def centered_derivatives(psi_center, psi_plus, psi_minus, h) -> CoordDerivatives:
    """Centered first and second differences along each axis.

    ``psi_plus[:, a]`` / ``psi_minus[:, a]`` hold psi at the point shifted by
    ``+h[a]`` / ``-h[a]`` along axis ``a``.
    """
    c = np.asarray(psi_center, dtype=float)
    p = np.asarray(psi_plus, dtype=float)
    m = np.asarray(psi_minus, dtype=float)
    if p.ndim == 1:
        p, m = p[:, None], m[:, None]
    c = c.reshape(-1, 1)
    h = np.broadcast_to(np.asarray(h, dtype=float), (p.shape[1],))
    if np.any(h <= 0):
        raise ContractError("spacing must be positive")
    return CoordDerivatives(first=(p - m) / (2.0 * h), second=(p - 2.0 * c + m) / h ** 2,
                            spacing=np.array(h))


def theoretical_coeffs_2d(mu, nu, T: float, d1: CoordDerivatives, d2: CoordDerivatives):
    """Expected drifts and diffusions of ``(psi_1, psi_2)`` for isotropic noise ``sqrt(2T)``.

    Returns ``(theta1, theta2, theta3, theta4)``: drifts of psi_1, psi_2 and
    their diffusion coefficients.
    """
    def one(d):
        drift = d.first[:, 0] * mu + d.first[:, 1] * nu + T * (d.second[:, 0] + d.second[:, 1])
        diff = np.sqrt(2.0 * T) * np.hypot(d.first[:, 0], d.first[:, 1])
        return drift, diff

    t1, t3 = one(d1)
    t2, t4 = one(d2)
    return t1, t2, t3, t4


def ito_1d(drift_x, diff2_x, dpsi_dx, d2psi_dx2):
    """Drift and diffusion of ``psi(x)`` given those of ``x`` (diffusion as a variance rate)."""
    diff2_x = np.asarray(diff2_x, dtype=float)
    if np.any(diff2_x < 0):
        raise ContractError("diffusion (variance rate) must be nonnegative")
    dpsi = np.asarray(dpsi_dx, dtype=float)
    drift = np.asarray(drift_x, dtype=float) * dpsi + 0.5 * diff2_x * np.asarray(d2psi_dx2, dtype=float)
    return drift, np.sqrt(diff2_x) * np.abs(dpsi)


def _merge_close(xs, ys, tol):
    """Average runs of sorted abscissae whose gaps are at most ``tol``.

    Returns the merged abscissae, values and multiplicities (used as weights).
    """
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    group = np.concatenate([[0], np.cumsum(np.diff(xs) > tol)])
    counts = np.bincount(group).astype(float)
    return np.bincount(group, xs) / counts, np.bincount(group, ys) / counts, counts


def spline_derivatives(xs, psis, query=None, smoothing=None, merge_tol: float = 1e-5):
    """Cubic smoothing spline of ``psi(x)`` and its first two derivatives.

    ``smoothing`` is the roughness penalty; ``None`` selects it by
    generalized cross-validation.  Abscissae closer than ``merge_tol`` times
    the data range are averaged and weighted by multiplicity: exact
    duplicates must be merged anyway, and near-duplicates make the GCV
    system singular.  If GCV still fails the tolerance is raised tenfold
    (at most three times).  Returns ``(d1, d2, spline)`` at ``query``
    (defaults to ``xs``).
    """
    xs = np.asarray(xs, dtype=float).ravel()
    psis = np.asarray(psis, dtype=float).ravel()
    if xs.size != psis.size:
        raise ContractError("xs and psis must have equal length")
    span = float(np.ptp(xs)) if xs.size else 0.0
    if span == 0.0:
        raise ContractError("all abscissae coincide")
    tol = merge_tol * span
    for attempt in range(4):
        ux, uy, w = _merge_close(xs, psis, tol)
        if ux.size < 8:
            raise ContractError("need at least 8 distinct abscissae for a smoothing spline")
        try:
            spl = make_smoothing_spline(ux, uy, w=w, lam=smoothing)
            break
        except (ValueError, np.linalg.LinAlgError) as exc:
            if attempt == 3:
                raise NumericalError(f"smoothing spline fit failed: {exc}") from exc
            tol *= 10.0
    q = xs if query is None else np.asarray(query, dtype=float)
    return spl.derivative(1)(q), spl.derivative(2)(q), spl
