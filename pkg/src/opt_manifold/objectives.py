"""Test objectives.

All objectives are vectorized over leading axes: ``x`` has shape ``(..., n)``
and the result has shape ``(...)``.  The samplers always *minimize*; for
objectives that are meant to be maximized (the ridge density) use
:meth:`Objective.energy`, which returns ``-f``.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ContractError

# log(1/C) for the ridge density: maximum of the exponent found by a dense
# polar grid (dtheta = 1e-4 on [-pi, pi], dr = 1e-3 on [1.8, 2.2]).
# Regenerated by tests/test_objectives.py::test_ridge_normalization_regenerates.
RIDGE_LOG_NORM = 466.5560082235281


class ObjectiveId(str, Enum):
    QUAD1D = "quad1d"
    LINEAR2D = "linear2d"
    BAYES_RIDGE = "bayes_ridge"
    CYLINDER_WELL = "cylinder_well"


DIMENSION = {
    ObjectiveId.QUAD1D: 1,
    ObjectiveId.LINEAR2D: 2,
    ObjectiveId.BAYES_RIDGE: 2,
    ObjectiveId.CYLINDER_WELL: 3,
}


@dataclass(frozen=True)
class CylinderParams:
    k1: float = 1e4
    k2: float = 20.0
    R: float = 5.0 / np.pi

    def __post_init__(self):
        for name in ("k1", "k2", "R"):
            if not getattr(self, name) > 0:
                raise ContractError(f"cyl.{name} must be positive, got {getattr(self, name)!r}")


def quad1d(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * x[..., 0] ** 2


def linear2d(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0] + 2.0 * x[..., 1]


def ridge_exponent(x):
    """Unnormalized log-density of the ridge objective."""
    x = np.asarray(x, dtype=float)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    return -25.0 * r2 ** 2 + 216.0 * r2 - 0.05 * np.sqrt((x[..., 0] - 2.0) ** 2 + x[..., 1] ** 2)


def bayes_ridge(x):
    return np.exp(ridge_exponent(x) - RIDGE_LOG_NORM)


def well_angle(theta):
    """Asymmetric double well along the cylinder angle."""
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta)
    return -1.2 + 3.4 * c ** 2 - 0.59 * c - 1.1 * np.sin(theta)


def well_angle_derivative(theta):
    theta = np.asarray(theta, dtype=float)
    s, c = np.sin(theta), np.cos(theta)
    return -6.8 * s * c + 0.59 * s - 1.1 * c


def to_cylindrical(x):
    """Cartesian ``(..., 3)`` to ``(r, theta, z)``; theta is 0 on the axis."""
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    theta = np.where(r > 0, np.arctan2(x[..., 1], x[..., 0]), 0.0)
    return r, theta, x[..., 2]


def from_cylindrical(r, theta, z):
    r, theta, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, theta, z)))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)


def cylinder_well(x, params: CylinderParams = CylinderParams()):
    r, theta, z = to_cylindrical(x)
    return 0.5 * params.k1 * (r - params.R) ** 2 + well_angle(theta) + 0.5 * params.k2 * z ** 2


@dataclass(frozen=True)
class Objective:
    """An objective with a fixed input dimension.

    ``maximize`` marks objectives whose larger values are better; the
    samplers then run on ``energy = -f``.
    """

    name: str
    dim: int
    fn: Callable
    maximize: bool = False
    params: dict = field(default_factory=dict)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise ContractError(
                f"{self.name} expects points with {self.dim} coordinates, got shape {x.shape}")
        return x

    def __call__(self, x):
        return self.fn(self._check(x))

    def energy(self, x):
        v = self.fn(self._check(x))
        return -v if self.maximize else v


def make_objective(tag, cyl: CylinderParams | None = None) -> Objective:
    tag = ObjectiveId(tag)
    dim = DIMENSION[tag]
    if tag is ObjectiveId.QUAD1D:
        return Objective(tag.value, dim, quad1d)
    if tag is ObjectiveId.LINEAR2D:
        return Objective(tag.value, dim, linear2d)
    if tag is ObjectiveId.BAYES_RIDGE:
        return Objective(tag.value, dim, bayes_ridge, maximize=True)
    cyl = cyl or CylinderParams()
    return Objective(tag.value, dim, lambda x: cylinder_well(x, cyl),
                     params={"k1": cyl.k1, "k2": cyl.k2, "R": cyl.R})


def evaluate(tag, x, cyl: CylinderParams | None = None):
    """Evaluate objective ``tag`` at ``x`` (shape ``(..., n)``)."""
    return make_objective(tag, cyl)(x)


def constant_objective(dim: int, value: float = 0.0) -> Objective:
    """Flat objective; proposals are always accepted."""
    return Objective(f"constant{dim}d", dim, lambda x: np.full(np.shape(x)[:-1], float(value)))


def well_global_minimizer(n_grid: int = 200_001) -> float:
    """Global minimizer of the angular well by dense search plus bounded refinement."""
    from scipy.optimize import minimize_scalar

    grid = np.linspace(-np.pi, np.pi, n_grid)
    t0 = grid[np.argmin(well_angle(grid))]
    step = grid[1] - grid[0]
    res = minimize_scalar(lambda t: float(well_angle(t)), bounds=(t0 - step, t0 + step),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x)
