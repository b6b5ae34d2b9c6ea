"""Constant-temperature random-walk Metropolis-Hastings and Euler-Maruyama Langevin.

The sampler minimizes an energy ``f`` (pass ``objective.energy`` for
maximization problems).  Proposals are isotropic ``N(x, 2 T dt I)``, which in
the small-step limit reproduces one Euler-Maruyama step of
``dx = -grad f dt + sqrt(2T) dW``.
"""
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractError, DegeneracyError
from .rng import substream

DEFAULT_MAX_PROPOSALS = 10 ** 6
_CHUNK = 4096


@dataclass(frozen=True)
class SamplerParams:
    T: float
    dt: float

    def __post_init__(self):
        if not self.T > 0:
            raise ContractError(f"sampler.T must be positive, got {self.T!r}")
        if not self.dt > 0:
            raise ContractError(f"sampler.dt must be positive, got {self.dt!r}")

    @property
    def proposal_std(self) -> float:
        return float(np.sqrt(2.0 * self.T * self.dt))


@dataclass
class Trajectory:
    """Recorded states of one run.

    ``states`` has shape ``(k, ...)`` with the time axis first.  ``values``
    holds the energy at each recorded state and ``eval_indices`` the running
    evaluation count at which that state was first evaluated (1-based, the
    start is evaluation 1).
    """

    times: np.ndarray
    states: np.ndarray
    accepted_count: int = 0
    eval_count: int = 0
    values: np.ndarray | None = None
    eval_indices: np.ndarray | None = None
    nonfinite_count: int = 0

    def __len__(self):
        return len(self.times)

    @property
    def end(self):
        return self.states[-1]


@dataclass
class BurstEnsemble:
    """``n_traj`` bursts launched from one start point.

    ``paths`` has shape ``(n_traj, n_steps + 1, n)``; ``paths[:, 0]`` equals
    ``start`` for every trajectory.
    """

    start: np.ndarray
    paths: np.ndarray
    dt_burst: float
    dt: float
    accepted: np.ndarray = field(default=None)
    eval_count: int = 0
    nonfinite_count: int = 0

    @property
    def n_traj(self) -> int:
        return self.paths.shape[0]

    @property
    def ends(self) -> np.ndarray:
        return self.paths[:, -1]

    @property
    def trajectories(self) -> list[Trajectory]:
        times = self.dt * np.arange(self.paths.shape[1])
        acc = self.accepted if self.accepted is not None else np.zeros(self.n_traj, dtype=int)
        return [Trajectory(times=times, states=p, accepted_count=int(a),
                           eval_count=self.paths.shape[1])
                for p, a in zip(self.paths, acc)]


class Step(NamedTuple):
    x: np.ndarray
    accepted: bool
    fx: float
    nonfinite: bool


def acceptance_probability(f_old, f_new, T):
    """``min(1, exp(-(f_new - f_old)/T))``; non-finite ``f_new`` gives 0."""
    f_old = np.asarray(f_old, dtype=float)
    f_new = np.asarray(f_new, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        a = np.minimum(1.0, np.exp(-(f_new - f_old) / T))
    return np.where(np.isfinite(f_new), a, 0.0)


def rwmh_step(x, params: SamplerParams, f: Callable, rng: np.random.Generator, fx=None) -> Step:
    """One Metropolis step from ``x``; ``fx`` may carry the cached ``f(x)``."""
    x = np.asarray(x, dtype=float)
    if fx is None:
        fx = float(f(x))
    y = x + params.proposal_std * rng.standard_normal(x.shape)
    fy = float(f(y))
    if not np.isfinite(fy):
        return Step(x, False, fx, True)
    if fy <= fx or rng.random() < np.exp(-(fy - fx) / params.T):
        return Step(y, True, fy, False)
    return Step(x, False, fx, False)


def rwmh_burst(start, params: SamplerParams, f: Callable, rng: np.random.Generator, *,
               n_accepted: int | None = None, n_steps: int | None = None,
               record: str = "accepted", max_proposals: int = DEFAULT_MAX_PROPOSALS,
               eval_offset: int = 0) -> Trajectory:
    """Run a single RWMH chain until ``n_accepted`` acceptances or ``n_steps`` proposals.

    ``record="accepted"`` keeps the start plus every accepted state (a burst
    cloud); ``record="all"`` keeps the state after every proposal, repeats
    included, which is what fixed-step increment estimators and equilibrium
    averages need.  ``eval_offset`` shifts the recorded evaluation indices so
    a caller can keep a global evaluation clock.
    """
    if (n_accepted is None) == (n_steps is None):
        raise ContractError("give exactly one of n_accepted / n_steps")
    if record not in ("accepted", "all"):
        raise ContractError(f"record must be 'accepted' or 'all', got {record!r}")
    if n_accepted is not None and n_accepted < 1:
        raise ContractError("n_accepted must be >= 1")
    if n_steps is not None and n_steps < 0:
        raise ContractError("n_steps must be >= 0")

    x = np.array(start, dtype=float)
    shape = x.shape
    std, T = params.proposal_std, params.T
    fx = float(f(x))
    evals = 1
    states, values, times, idx = [x.copy()], [fx], [0.0], [eval_offset + 1]
    accepted = nonfinite = proposals = 0
    target = n_steps if n_steps is not None else max_proposals
    if n_steps is not None and n_steps > max_proposals:
        raise ContractError("n_steps exceeds max_proposals")

    while proposals < target and (n_accepted is None or accepted < n_accepted):
        k = min(_CHUNK, target - proposals)
        noise = rng.standard_normal((k,) + shape) * std
        logu = np.log(rng.random(k))
        for j in range(k):
            y = x + noise[j]
            fy = float(f(y))
            evals += 1
            proposals += 1
            if not np.isfinite(fy):
                nonfinite += 1
                ok = False
            else:
                ok = fy <= fx or logu[j] < -(fy - fx) / T
            if ok:
                x, fx = y, fy
                accepted += 1
            if ok or record == "all":
                states.append(x.copy())
                values.append(fx)
                times.append(proposals * params.dt)
                idx.append(eval_offset + evals if ok else idx[-1])
            if n_accepted is not None and accepted >= n_accepted:
                break

    if n_accepted is not None and accepted < n_accepted:
        raise DegeneracyError(
            f"only {accepted} of {n_accepted} proposals accepted after {proposals} tries; "
            f"objective/temperature pairing looks degenerate (T={T}, dt={params.dt})")
    return Trajectory(times=np.asarray(times), states=np.asarray(states), accepted_count=accepted,
                      eval_count=evals, values=np.asarray(values), eval_indices=np.asarray(idx),
                      nonfinite_count=nonfinite)


def rwmh_chains(starts, params: SamplerParams, f: Callable, noise, logu):
    """Advance independent chains in lockstep.

    ``noise`` is ``(M, k, n)`` standard normals and ``logu`` ``(M, k)`` log-uniforms.
    Returns ``(paths (M, k+1, n), accepted (M,), nonfinite (M,))``.
    """
    x = np.array(starts, dtype=float)
    M, k = logu.shape
    fx = np.asarray(f(x), dtype=float)
    paths = np.empty((M, k + 1, x.shape[-1]))
    paths[:, 0] = x
    accepted = np.zeros(M, dtype=int)
    nonfinite = np.zeros(M, dtype=int)
    std, T = params.proposal_std, params.T
    for j in range(k):
        y = x + std * noise[:, j]
        fy = np.asarray(f(y), dtype=float)
        bad = ~np.isfinite(fy)
        with np.errstate(invalid="ignore", over="ignore"):
            ok = (fy <= fx) | (logu[:, j] < -(fy - fx) / T)
        ok &= ~bad
        x = np.where(ok[:, None], y, x)
        fx = np.where(ok, fy, fx)
        accepted += ok
        nonfinite += bad
        paths[:, j + 1] = x
    return paths, accepted, nonfinite


def ensemble_bursts(starts, n_traj: int, duration: float, params: SamplerParams, f: Callable,
                    seed: int, label: str = "burst", index_offset: int = 0) -> list[BurstEnsemble]:
    """``n_traj`` fixed-duration RWMH bursts from every start point.

    Each ensemble ``i`` draws from ``substream(seed, label, index_offset + i)``
    (trajectory-major order), so results do not depend on how the ensembles
    are batched.  All chains are advanced together.
    """
    if n_traj < 1:
        raise ContractError("n_traj must be >= 1")
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n_steps = int(round(duration / params.dt))
    if n_steps < 1:
        raise ContractError("burst duration shorter than one time step")
    G, n = starts.shape
    noise = np.empty((G * n_traj, n_steps, n))
    logu = np.empty((G * n_traj, n_steps))
    for i in range(G):
        rng = substream(seed, label, index_offset + i)
        sl = slice(i * n_traj, (i + 1) * n_traj)
        noise[sl] = rng.standard_normal((n_traj, n_steps, n))
        logu[sl] = np.log(rng.random((n_traj, n_steps)))
    x0 = np.repeat(starts, n_traj, axis=0)
    paths, acc, bad = rwmh_chains(x0, params, f, noise, logu)
    out = []
    for i in range(G):
        sl = slice(i * n_traj, (i + 1) * n_traj)
        out.append(BurstEnsemble(start=starts[i].copy(), paths=paths[sl], dt_burst=n_steps * params.dt,
                                 dt=params.dt, accepted=acc[sl],
                                 eval_count=n_traj * (n_steps + 1), nonfinite_count=int(bad[sl].sum())))
    return out


def langevin_em_burst(start, T: float, dt: float, duration: float, f_gradient: Callable,
                      rng: np.random.Generator) -> Trajectory:
    """Euler-Maruyama for ``dx = -grad f dt + sqrt(2T) dW``.

    ``start`` may carry leading batch axes; ``states`` then has shape
    ``(n_steps + 1,) + start.shape``.
    """
    x = np.array(start, dtype=float)
    n_steps = int(round(duration / dt))
    states = np.empty((n_steps + 1,) + x.shape)
    states[0] = x
    s = np.sqrt(2.0 * T * dt)
    for k in range(n_steps):
        x = x - f_gradient(x) * dt + s * rng.standard_normal(x.shape)
        states[k + 1] = x
    return Trajectory(times=dt * np.arange(n_steps + 1), states=states, accepted_count=n_steps,
                      eval_count=0)
