"""Diffusion maps, Mahalanobis kernels, local covariances and a PCA baseline.

Eigenvectors are returned unscaled (diffusion time zero) and normalized in
the stationary measure of the Markov matrix, so the trivial eigenvector is
exactly one and the nontrivial coordinates are O(1) whatever the sample
size.  Signs are fixed so that the entry of largest magnitude is positive.
"""
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import ContractError, DegeneracyError, NumericalError

EUCLIDEAN = "euclidean"
MAHALANOBIS = "mahalanobis"
DENSE_LIMIT = 2500      # above this size use sparse shift-invert Lanczos
DROP_TOL = 1e-12        # relative weight below which kernel entries count as absent
SHIFT = 1.0 + 1e-3      # shift just above the top eigenvalue, which is exactly 1
SPARSE_FILL = 0.1       # kernels denser than this are treated as dense
_ROW_CHUNK = 512


@dataclass(frozen=True)
class KernelSpec:
    epsilon: float
    alpha: float = 1.0
    metric: str = EUCLIDEAN

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError(f"dmaps.epsilon must be positive, got {self.epsilon!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"dmaps.alpha must lie in [0, 1], got {self.alpha!r}")
        if self.metric not in (EUCLIDEAN, MAHALANOBIS):
            raise ContractError(f"dmaps.metric must be euclidean or mahalanobis, got {self.metric!r}")


@dataclass
class Embedding:
    eigenvalues: np.ndarray          # lambda_0 .. lambda_k, descending
    coords: np.ndarray               # (m, k): psi_1 .. psi_k
    kernel: KernelSpec | None = None
    selected: list = field(default_factory=list)
    harmonic_flags: np.ndarray | None = None
    degenerate: bool = False

    def psi(self, j: int) -> np.ndarray:
        """Diffusion coordinate ``psi_j`` (1-based, as usual)."""
        return self.coords[:, j - 1]

    @property
    def selected_coords(self) -> np.ndarray:
        return self.coords[:, [j - 1 for j in self.selected]]


@dataclass
class LocalCovariance:
    point_index: int
    matrix: np.ndarray
    pinv: np.ndarray
    rank_used: int


# ---------------------------------------------------------------------------
# covariances and pseudo-inverses

def svd_pseudo_inverse(C, rank: int):
    """Rank-truncated pseudo-inverse ``sum_{m<=rank} v_m v_m^T / s_m``.

    ``C`` may be a single ``(n, n)`` matrix or a stack ``(m, n, n)``.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[-1]
    if not 1 <= rank <= n:
        raise ContractError(f"dmaps.rank_d must lie in [1, {n}], got {rank}")
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    _, s, vt = np.linalg.svd(C)
    s_keep = s[..., :rank]
    if np.any(s_keep < 1e-14):
        bad = np.argwhere(np.atleast_2d(s_keep) < 1e-14)[0][0]
        raise NumericalError(
            f"singular value below 1e-14 inside the retained rank {rank} (sample {bad}); "
            "rank_d is misconfigured")
    v = np.swapaxes(vt[..., :rank, :], -1, -2)
    return np.einsum("...ik,...k,...jk->...ij", v, 1.0 / s_keep, v)


def covariance_of_endpoints(ends):
    """Covariance of burst endpoints around their mean; ``ends`` is ``(..., n_bursts, n)``."""
    ends = np.asarray(ends, dtype=float)
    d = ends - ends.mean(axis=-2, keepdims=True)
    return np.einsum("...ki,...kj->...ij", d, d) / (ends.shape[-2] - 1)


def local_covariance(center, simulator: Callable, n_bursts: int, dt_cov: float, rank_d: int,
                     point_index: int = 0) -> LocalCovariance:
    """Estimate the local covariance at ``center`` from short bursts.

    ``simulator(center, n_bursts, dt_cov)`` must return the burst endpoints
    as an ``(n_bursts, n)`` array.
    """
    center = np.asarray(center, dtype=float)
    if n_bursts < center.shape[-1]:
        warnings.warn(f"n_bursts={n_bursts} is below the ambient dimension {center.shape[-1]}")
    ends = np.asarray(simulator(center, n_bursts, dt_cov), dtype=float)
    C = covariance_of_endpoints(ends)
    return LocalCovariance(point_index, C, svd_pseudo_inverse(C, rank_d), rank_d)


def _as_pinv_stack(covs, m: int, n: int):
    if covs is None:
        raise ContractError("the Mahalanobis metric needs one local covariance per sample")
    if isinstance(covs, np.ndarray):
        P = covs
    else:
        P = np.stack([c.pinv for c in covs])
    if P.shape != (m, n, n):
        raise ContractError(f"expected {m} pseudo-inverses of shape ({n}, {n}), got {P.shape}")
    P = 0.5 * (P + np.swapaxes(P, 1, 2))
    lo = np.linalg.eigvalsh(P)[:, 0]
    scale = np.abs(P).reshape(m, -1).max(axis=1)
    bad = np.nonzero(lo < -1e-8 * np.maximum(scale, 1e-300))[0]
    if bad.size:
        raise NumericalError(f"local covariance pseudo-inverse of sample {bad[0]} is not PSD")
    return P


# ---------------------------------------------------------------------------
# distances and weights

def pairwise_sq_distances(data, metric: str = EUCLIDEAN, covs=None, out=None):
    """Squared pairwise distances, row-chunked to bound temporaries.

    Mahalanobis: ``d2_ij = 1/2 (y_i - y_j)^T [P_i + P_j] (y_i - y_j)`` with
    ``P`` the covariance pseudo-inverses (a ``(m, n, n)`` array or a list of
    :class:`LocalCovariance`).
    """
    Y = np.asarray(data, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    m, n = Y.shape
    D = np.empty((m, m)) if out is None else out
    if metric == EUCLIDEAN:
        sq = np.einsum("ij,ij->i", Y, Y)
        for a in range(0, m, _ROW_CHUNK):
            b = min(a + _ROW_CHUNK, m)
            blk = D[a:b]
            np.dot(Y[a:b], Y.T, out=blk)
            blk *= -2.0
            blk += sq[a:b, None]
            blk += sq[None, :]
        np.maximum(D, 0.0, out=D)
        np.fill_diagonal(D, 0.0)
        return D
    if metric != MAHALANOBIS:
        raise ContractError(f"unknown metric {metric!r}")
    P = _as_pinv_stack(covs, m, n)
    Pf = P.reshape(m, n * n)
    YY = np.einsum("ia,ib->iab", Y, Y).reshape(m, n * n)
    PY = np.einsum("iab,ib->ia", P, Y)          # P_i y_i
    self_q = np.einsum("ia,ia->i", PY, Y)        # y_i^T P_i y_i
    for a in range(0, m, _ROW_CHUNK):
        b = min(a + _ROW_CHUNK, m)
        blk = D[a:b]
        # y_j^T P_i y_j + y_i^T P_j y_i
        np.dot(Pf[a:b], YY.T, out=blk)
        blk += YY[a:b] @ Pf.T
        # -2 y_i^T P_i y_j - 2 y_j^T P_j y_i
        blk -= 2.0 * (PY[a:b] @ Y.T)
        blk -= 2.0 * (Y[a:b] @ PY.T)
        blk += self_q[a:b, None]
        blk += self_q[None, :]
        blk *= 0.5
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def epsilon_heuristic(data=None, sq_distances=None, method: str = "median", k: int = 10,
                      scale: float = 1.0, max_pairs: int = 2_000_000, seed: int = 0) -> float:
    """Kernel scale from the data.

    ``method="median"`` is the median pairwise distance (the default);
    ``method="knn"`` is the median distance to the ``k``-th nearest
    neighbour, for kernels that must stay local.  The result is multiplied
    by ``scale``.  Large inputs are summarized on a fixed random subset of
    rows.
    """
    if sq_distances is None:
        if data is None:
            raise ContractError("give data or sq_distances")
        Y = np.asarray(data, dtype=float)
        Y = Y[:, None] if Y.ndim == 1 else Y
        if Y.shape[0] < 2:
            raise ContractError("epsilon_heuristic needs at least 2 points")
        rows = _row_subset(Y.shape[0], max_pairs, seed)
        D2 = pairwise_sq_distances(Y)[rows] if rows is not None else pairwise_sq_distances(Y)
    else:
        D2 = np.asarray(sq_distances, dtype=float)
        if D2.shape[0] < 2:
            raise ContractError("epsilon_heuristic needs at least 2 points")
        rows = _row_subset(D2.shape[0], max_pairs, seed)
    m = D2.shape[1]
    if rows is None:
        rows = np.arange(m)
        sub = D2
    else:
        sub = D2 if D2.shape[0] == rows.size else D2[rows]
    if method == "median":
        mask = np.ones(sub.shape, dtype=bool)
        mask[np.arange(rows.size), rows] = False
        if rows.size == m:
            mask &= np.triu(np.ones((m, m), dtype=bool), 1)
        vals = sub[mask]
    elif method == "knn":
        kk = min(k, m - 1)
        vals = np.partition(sub, kk, axis=1)[:, kk]
    else:
        raise ContractError(f"unknown epsilon method {method!r}")
    eps = float(np.sqrt(np.median(vals)))
    if not eps > 0:
        raise DegeneracyError("all points coincide; kernel scale is zero")
    return eps * scale


def _row_subset(m: int, max_pairs: int, seed: int):
    if m * m <= max_pairs:
        return None
    n_rows = max(1, max_pairs // m)
    return np.sort(np.random.default_rng(seed).choice(m, size=n_rows, replace=False))


def pairwise_weights(data, spec: KernelSpec, covs=None, sq_distances=None):
    """Gaussian weights ``exp(-d2/eps^2)``; reuses ``sq_distances`` in place if given."""
    D = sq_distances if sq_distances is not None else pairwise_sq_distances(data, spec.metric, covs)
    D *= -1.0 / spec.epsilon ** 2
    np.exp(D, out=D)
    return D


# ---------------------------------------------------------------------------
# embedding

def _normalize_alpha(W, alpha: float, overwrite: bool):
    W = W if overwrite else np.array(W, dtype=float)
    d = W.sum(axis=1)
    if np.any(d <= 0):
        raise DegeneracyError("a sample has zero total weight")
    if alpha:
        q = d ** -alpha
        W *= q[:, None]
        W *= q[None, :]
    return W


def markov_matrix(W, alpha: float = 1.0):
    """Row-stochastic ``K = Dt^-1 Wt`` with ``Wt = D^-a W D^-a``."""
    Wt = _normalize_alpha(W, alpha, overwrite=False)
    return Wt / Wt.sum(axis=1, keepdims=True)


def _sparsify(S, cut, max_fill: float = SPARSE_FILL):
    """CSR copy of the entries ``>= cut``, built in row chunks.

    Returns ``None`` when more than ``max_fill`` of the entries survive; a
    sparse copy would then cost more memory than it saves.
    """
    m = S.shape[0]
    budget = max_fill * m * m
    nnz = 0
    for a in range(0, m, _ROW_CHUNK):
        nnz += int(np.count_nonzero(S[a:a + _ROW_CHUNK] >= cut))
        if nnz > budget:
            return None
    blocks = []
    for a in range(0, m, _ROW_CHUNK):
        blk = S[a:a + _ROW_CHUNK]
        blocks.append(sparse.csr_matrix(np.where(blk >= cut, blk, 0.0)))
    return sparse.vstack(blocks, format="csr")


def _symmetrize(S):
    """Average ``S`` with its transpose in place, block by block."""
    m = S.shape[0]
    for a in range(0, m, _ROW_CHUNK):
        ra = slice(a, min(a + _ROW_CHUNK, m))
        for c in range(a, m, _ROW_CHUNK):
            rc = slice(c, min(c + _ROW_CHUNK, m))
            avg = 0.5 * (S[ra, rc] + S[rc, ra].T)
            S[ra, rc] = avg
            S[rc, ra] = avg.T


def _top_eigs(S, n, Sp=None):
    """Largest ``n`` eigenpairs of a symmetric matrix with spectrum in [-1, 1].

    Small problems go to the dense solver.  For large ones the leading
    diffusion-map eigenvalues cluster near 1, where plain Lanczos converges
    slowly; when the kernel is sparse (``Sp``), shift-invert about a point
    just above 1 separates them.  Wide kernels are not sparse, but their
    leading eigenvalues are well separated and plain Lanczos on the dense
    matrix is fast.
    """
    m = S.shape[0]
    if m <= DENSE_LIMIT:
        return linalg.eigh(S, subset_by_index=[m - n, m - 1])
    if Sp is not None:
        try:
            return eigsh(Sp.tocsc(), k=n, sigma=SHIFT, which="LM", tol=1e-12)
        except MemoryError:
            pass
    return eigsh(S, k=n, which="LA", tol=1e-12)


def _main_component(Sp):
    """Boolean mask of the largest connected component of a sparse kernel graph.

    Returns ``None`` when the graph is connected.
    """
    n, labels = connected_components(Sp, directed=False)
    if n == 1:
        return None
    return labels == np.argmax(np.bincount(labels))


def dmaps_embed(weights, alpha: float = 1.0, k: int = 5, kernel: KernelSpec | None = None,
                overwrite: bool = False) -> Embedding:
    """Top ``k`` nontrivial right eigenvectors of the diffusion Markov matrix.

    Solves the symmetric conjugate ``Dt^-1/2 Wt Dt^-1/2`` and maps back.
    ``overwrite=True`` lets the routine reuse ``weights`` as workspace.
    """
    W = np.asarray(weights, dtype=float)
    m = W.shape[0]
    if W.shape != (m, m):
        raise ContractError("weights must be square")
    if not 1 <= k < m:
        raise ContractError(f"need 1 <= k < m, got k={k}, m={m}")
    if np.any(W < 0):
        raise ContractError("weights must be nonnegative")
    S = _normalize_alpha(W, alpha, overwrite)
    dt = S.sum(axis=1)
    r = 1.0 / np.sqrt(dt)
    S *= r[:, None]
    S *= r[None, :]
    _symmetrize(S)
    # A few stray points can sit so far out that they form their own
    # components; the leading eigenvalue is then degenerate and the solver
    # stalls.  Solve on the main component and reach the stragglers by
    # Nystrom extension.  A graph with no dominant component is left alone
    # and reported as degenerate below.
    Sp = _sparsify(S, DROP_TOL * S.max())
    main = _main_component(Sp) if Sp is not None else None
    if main is not None and main.mean() < 0.5:
        main = None
    try:
        if main is None:
            sub = S
            vals, vecs = _top_eigs(S, k + 1, Sp)
        else:
            sub = Sp[main][:, main]
            vals, vecs = _top_eigs(sub.toarray() if main.sum() <= DENSE_LIMIT else sub, k + 1, sub)
    except ArpackNoConvergence as exc:
        res = np.linalg.norm(sub @ exc.eigenvectors - exc.eigenvectors * exc.eigenvalues) \
            if exc.eigenvectors.size else float("nan")
        raise NumericalError(f"eigensolver did not converge (residual norm {res:.3e})") from exc
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    if main is not None:
        full = np.empty((m, k + 1))
        full[main] = vecs
        # K_ij is proportional to S_ij / r_j; the extension works on the
        # unconjugated vectors v * r, then maps back
        rows = S[np.ix_(~main, main)] / r[main][None, :]
        tot = rows.sum(axis=1)
        if np.any(tot <= 0):
            raise NumericalError("points with zero kernel weight to the main component; "
                                 "the kernel scale is too small")
        ext = (rows / tot[:, None]) @ (vecs * r[main][:, None]) / vals[None, :]
        full[~main] = ext / r[~main][:, None]
        vecs = full
        warnings.warn(f"{int((~main).sum())} points are disconnected from the kernel graph; "
                      "their coordinates are Nystrom extensions")
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    psi = vecs * r[:, None]
    # normalize in the stationary measure pi = dt / sum(dt): psi_0 == 1
    pi = dt / dt.sum()
    psi /= np.sqrt(np.einsum("i,ij->j", pi, psi ** 2))[None, :]
    if psi[:, 0].mean() < 0:
        psi[:, 0] *= -1
    coords = psi[:, 1:]
    idx = np.argmax(np.abs(coords), axis=0)
    signs = np.sign(coords[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    coords = coords * signs[None, :]
    degenerate = bool(vals[0] - vals[1] < 1e-8)
    if degenerate:
        warnings.warn("diffusion-map spectrum has no gap below lambda_0; the kernel scale is "
                      "too small and the embedding is meaningless")
    flags = flag_harmonics(coords) if k > 1 else np.zeros(k, dtype=bool)
    return Embedding(eigenvalues=vals, coords=coords, kernel=kernel, selected=[1],
                     harmonic_flags=flags, degenerate=degenerate)


def flag_harmonics(coords, threshold: float = 0.97, reference: int = 1, degree: int = 4):
    """Flag coordinates that look like functions of ``psi_reference``.

    A higher harmonic ``cos(k u)`` of ``psi_ref = cos u`` is a degree-``k``
    polynomial of ``psi_ref``, so ``psi_j`` is flagged when a least-squares
    polynomial of ``psi_ref`` (up to ``degree``) explains it with correlation
    above ``threshold``.
    """
    coords = np.asarray(coords, dtype=float)
    ref = coords[:, reference - 1]
    u = (ref - ref.mean()) / (ref.std() or 1.0)
    V = np.vander(u, degree + 1)
    flags = np.zeros(coords.shape[1], dtype=bool)
    for j in range(coords.shape[1]):
        if j == reference - 1:
            continue
        y = coords[:, j]
        fit = V @ np.linalg.lstsq(V, y, rcond=None)[0]
        sy = y.std()
        r = np.corrcoef(fit, y)[0, 1] if sy > 0 and fit.std() > 0 else 0.0
        flags[j] = r > threshold
    return flags


def select_coordinates(embedding: Embedding, n: int) -> list[int]:
    """First ``n`` coordinates (1-based) by eigenvalue that are not flagged harmonics."""
    flags = embedding.harmonic_flags
    chosen = [j + 1 for j in range(embedding.coords.shape[1]) if flags is None or not flags[j]]
    if len(chosen) < n:
        raise DegeneracyError(f"only {len(chosen)} non-harmonic coordinates available, need {n}")
    embedding.selected = chosen[:n]
    return embedding.selected


def diffusion_map(data, k: int = 5, alpha: float = 1.0, epsilon=None, metric: str = EUCLIDEAN,
                  covs=None, eps_method: str = "median", eps_k: int = 10,
                  eps_scale: float = 1.0) -> Embedding:
    """Distances, kernel scale, weights and embedding in one call."""
    D = pairwise_sq_distances(data, metric, covs)
    if epsilon is None or epsilon == "auto":
        epsilon = epsilon_heuristic(sq_distances=D, method=eps_method, k=eps_k, scale=eps_scale)
    spec = KernelSpec(float(epsilon), alpha, metric)
    W = pairwise_weights(None, spec, sq_distances=D)
    return dmaps_embed(W, alpha=alpha, k=k, kernel=spec, overwrite=True)


def align_to(coords, reference):
    """Reorder and flip the columns of ``coords`` to best match ``reference``.

    Greedy matching on absolute Pearson correlation; returns the aligned
    array and the list of chosen source columns.
    """
    coords = np.asarray(coords, dtype=float)
    reference = np.asarray(reference, dtype=float)
    C = np.corrcoef(coords.T, reference.T)[:coords.shape[1], coords.shape[1]:]
    out = np.empty((coords.shape[0], reference.shape[1]))
    used, chosen = set(), []
    for t in range(reference.shape[1]):
        cand = [(abs(C[s, t]), s) for s in range(coords.shape[1]) if s not in used]
        _, s = max(cand)
        used.add(s)
        chosen.append(s)
        out[:, t] = coords[:, s] * (1.0 if C[s, t] >= 0 else -1.0)
    return out, chosen


# ---------------------------------------------------------------------------
# PCA and test manifolds

@dataclass
class PCAResult:
    components: np.ndarray      # (k, n)
    projections: np.ndarray     # (m, k)
    spectrum: np.ndarray        # all n covariance eigenvalues, descending
    mean: np.ndarray


def pca_embed(data, k: int) -> PCAResult:
    X = np.asarray(data, dtype=float)
    if k > X.shape[1]:
        raise ContractError(f"k={k} exceeds the ambient dimension {X.shape[1]}")
    mu = X.mean(axis=0)
    Xc = X - mu
    vals, vecs = np.linalg.eigh(Xc.T @ Xc / (X.shape[0] - 1))
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    comps = vecs[:, :k].T
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    return PCAResult(comps, Xc @ comps.T, vals, mu)


def swiss_roll_point(t, h):
    """Spiral ``(t cos t, h, t sin t)``: radius equals the angle parameter."""
    t = np.asarray(t, dtype=float)
    return np.stack([t * np.cos(t), np.asarray(h, dtype=float) * np.ones_like(t), t * np.sin(t)], axis=-1)


def swiss_roll_arclength(t, t0: float = 1.5 * np.pi):
    """Arclength of the spiral ``r = t`` from ``t0`` to ``t``."""
    f = lambda u: 0.5 * (u * np.sqrt(1 + u * u) + np.arcsinh(u))
    return f(np.asarray(t, dtype=float)) - f(t0)


def make_swiss_roll(m: int, seed: int, t_range=(1.5 * np.pi, 4.0 * np.pi), height: float = 30.0):
    """Uniform-in-parameter Swiss roll; returns ``(points, arclength, height)``."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(*t_range, size=m)
    h = rng.uniform(0.0, height, size=m)
    return swiss_roll_point(t, h), swiss_roll_arclength(t, t_range[0]), h


def make_semicircle_map(x_range=(-1.6, 1.6)):
    """Map a scalar onto the upper unit semicircle at constant speed.

    The angle is affine in ``x``: ``x_range[0] -> 0`` and ``x_range[1] -> pi``.
    """
    lo, hi = x_range
    rate = np.pi / (hi - lo)

    def transform(x):
        phi = rate * (np.asarray(x, dtype=float) - lo)
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)

    transform.rate = rate
    return transform
