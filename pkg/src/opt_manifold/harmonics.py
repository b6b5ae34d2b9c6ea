"""Geometric harmonics: out-of-sample extension for lifting and restriction.

A function known on training inputs is projected onto the well-conditioned
eigenvectors of a Gaussian kernel and extended to new inputs with the
Nystrom formula.  An affine least-squares trend is removed first and added
back on extension; without it the extension decays to zero a few kernel
widths outside the training set, which rules out extrapolating steps.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dmaps import epsilon_heuristic, pairwise_sq_distances
from .errors import ContractError, DegeneracyError

EXTRAPOLATION_RADIUS = 3.0     # in kernel widths


@dataclass(frozen=True)
class GHModel:
    train_inputs: np.ndarray      # (m, p)
    kernel_epsilon: float
    eigenvalues: np.ndarray       # retained sigma_j, descending
    eigenvectors: np.ndarray      # (m, r)
    coeffs: np.ndarray            # (r, q): projections of the detrended outputs
    trend: np.ndarray | None      # (p + 1, q) affine coefficients, or None
    delta: float
    discarded_rms: np.ndarray     # (q,) RMS of the discarded spectral part on the training set


def _design(x, with_trend: bool):
    return np.hstack([np.ones((x.shape[0], 1)), x]) if with_trend else None


def gh_fit(inputs, outputs, epsilon=None, delta: float = 1e-3, affine: bool = True) -> GHModel:
    """Fit an extension model mapping ``inputs`` (m, p) to ``outputs`` (m, q).

    ``epsilon=None`` or ``"auto"`` uses the median pairwise input distance.
    Eigenpairs with ``sigma_j >= delta * sigma_max`` are retained.
    """
    X = np.asarray(inputs, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    Y = np.asarray(outputs, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    m = X.shape[0]
    if m < 2:
        raise ContractError("gh_fit needs at least 2 training points")
    if Y.shape[0] != m:
        raise ContractError("inputs and outputs must have the same number of rows")
    if not 0.0 < delta < 1.0:
        raise ContractError(f"gh.delta must lie in (0, 1), got {delta!r}")
    if epsilon is None or epsilon == "auto":
        epsilon = epsilon_heuristic(X)
    if not epsilon > 0:
        raise ContractError("gh.epsilon must be positive")

    trend = None
    resid = Y
    if affine:
        A = _design(X, True)
        trend = np.linalg.lstsq(A, Y, rcond=None)[0]
        resid = Y - A @ trend

    K = pairwise_sq_distances(X)
    K *= -1.0 / epsilon ** 2
    np.exp(K, out=K)
    vals, vecs = linalg.eigh(K)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    keep = vals >= delta * vals[0]
    if not keep.any() or vals[0] <= 0:
        raise DegeneracyError("no kernel eigenpair survives the truncation; lower gh.delta")
    proj = vecs.T @ resid
    disc = vecs[:, ~keep] @ proj[~keep]
    return GHModel(train_inputs=X, kernel_epsilon=float(epsilon), eigenvalues=vals[keep],
                   eigenvectors=vecs[:, keep], coeffs=proj[keep], trend=trend, delta=delta,
                   discarded_rms=np.sqrt(np.mean(disc ** 2, axis=0)))


def gh_extend(model: GHModel, query):
    """Extend the fitted map to ``query`` (shape ``(p,)`` or ``(k, p)``).

    Returns ``(values, extrapolated)`` where ``extrapolated`` flags queries
    farther than three kernel widths from every training input.
    """
    Q = np.asarray(query, dtype=float)
    p = model.train_inputs.shape[1]
    single = Q.ndim == 0 or (Q.ndim == 1 and p > 1)
    Q = Q.reshape(1, -1) if single else (Q[:, None] if Q.ndim == 1 else Q)
    if Q.shape[1] != p:
        raise ContractError(f"query has {Q.shape[1]} coordinates, model expects {p}")
    X = model.train_inputs
    d2 = np.maximum((Q ** 2).sum(1)[:, None] + (X ** 2).sum(1)[None, :] - 2.0 * Q @ X.T, 0.0)
    kq = np.exp(-d2 / model.kernel_epsilon ** 2)
    phi = (kq @ model.eigenvectors) / model.eigenvalues[None, :]
    out = phi @ model.coeffs
    if model.trend is not None:
        out = out + _design(Q, True) @ model.trend
    extrap = np.sqrt(d2.min(axis=1)) > EXTRAPOLATION_RADIUS * model.kernel_epsilon
    if single:
        return out[0], bool(extrap[0])
    return out, extrap
