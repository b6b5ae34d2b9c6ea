"""Independent reference values used by the tests.

Nothing here imports the package's numerical routines; each oracle is a
closed form or a brute-force computation written out from scratch.
"""
import numpy as np


def fd_gradient(f, x, h: float = 1e-5):
    """Central-difference gradient of a scalar function of a vector."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def ou_moments(x0: float, t: float, theta: float = 1.0, T: float = 0.5):
    """Exact mean and variance of ``dx = -theta x dt + sqrt(2T) dW`` at time ``t``."""
    mean = x0 * np.exp(-theta * t)
    var = T / theta * (1.0 - np.exp(-2.0 * theta * t))
    return mean, var


def well_angle_prime(theta):
    """Hand-differentiated ``h'(theta)`` for ``h = -1.2 + 3.4 cos^2 - 0.59 cos - 1.1 sin``."""
    s, c = np.sin(theta), np.cos(theta)
    return 3.4 * 2.0 * c * (-s) - 0.59 * (-s) - 1.1 * c


def ridge_log_norm(dtheta: float = 1e-4, dr: float = 1e-3):
    """Maximum of the ridge exponent over a dense polar grid near ``r = 2``."""
    th = np.arange(-np.pi, np.pi + 1e-12, dtheta)
    best = -np.inf
    for r in np.arange(1.8, 2.2 + 1e-12, dr):
        x, y = r * np.cos(th), r * np.sin(th)
        e = -25.0 * r ** 4 + 216.0 * r ** 2 - 0.05 * np.sqrt((x - 2.0) ** 2 + y ** 2)
        best = max(best, float(e.max()))
    return best


def acceptance_mc(f, x0: float, T: float, dt: float, n: int, rng):
    """Monte-Carlo estimate of ``E[min(1, exp(-(f(y) - f(x0))/T))]``, ``y ~ N(x0, 2T dt)``.

    Returns ``(mean, standard error)``.
    """
    y = x0 + np.sqrt(2.0 * T * dt) * rng.standard_normal(n)
    a = np.minimum(1.0, np.exp(-(f(y) - f(x0)) / T))
    return a.mean(), a.std(ddof=1) / np.sqrt(n)


def acceptance_quadrature(f, x0: float, T: float, dt: float, n: int = 200_001):
    """Same expectation by trapezoidal quadrature against the proposal density."""
    s = np.sqrt(2.0 * T * dt)
    z = np.linspace(-10.0, 10.0, n)
    y = x0 + s * z
    w = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    a = np.minimum(1.0, np.exp(-(f(y) - f(x0)) / T))
    return float(np.trapezoid(a * w, z))


def logistic_ode(x0: float, t: float):
    """Closed-form solution of ``dx/dt = x - x^3``."""
    e = np.exp(2.0 * t)
    return x0 * np.sqrt(e / (1.0 + x0 * x0 * (e - 1.0)))


def rwmh_linear_drift(grad, T: float, dt: float):
    """Exact mean RWMH displacement per unit time on a linear objective.

    With proposal ``u ~ N(0, s^2)`` along the gradient (``s^2 = 2 T dt``) and
    ``a = |g|/T``, ``E[u min(1, exp(-a u))] = -a s^2 exp(a^2 s^2/2) Q(a s)``,
    where ``Q`` is the standard normal upper tail.  The transverse components
    average to zero.  Tends to ``-grad`` as ``dt -> 0``.
    """
    from math import erfc, exp, sqrt
    g = np.asarray(grad, dtype=float)
    gn = float(np.linalg.norm(g))
    s = sqrt(2.0 * T * dt)
    a = gn / T
    q = 0.5 * erfc(a * s / sqrt(2.0))
    step = -a * s * s * exp(0.5 * (a * s) ** 2) * q
    return step / dt * g / gn
