"""RWMH bursts on the quadratic versus Euler-Maruyama Langevin paths.

Prints endpoint moments of both ensembles next to the exact
Ornstein-Uhlenbeck values after 100 steps from x = 1.

    python3 demos/sampler_vs_langevin.py
"""
import math

import numpy as np

from opt_manifold import SamplerParams, ensemble_bursts, make_objective
from opt_manifold.rng import substream
from opt_manifold.sampler import langevin_em_burst

T, dt, n_steps, n = 0.5, 1e-3, 100, 10_000
q = make_objective("quad1d")
rw = ensemble_bursts([[1.0]], n, n_steps * dt, SamplerParams(T, dt), q.energy, seed=1)[0].ends[:, 0]
lv = langevin_em_burst(np.ones(n), T, dt, n_steps * dt, lambda x: x, substream(1, "demo")).states[-1]
t = n_steps * dt
print(f"{'':10s}{'mean':>10s}{'variance':>10s}")
print(f"{'exact OU':10s}{math.exp(-t):10.4f}{T * (1 - math.exp(-2 * t)):10.4f}")
print(f"{'RWMH':10s}{rw.mean():10.4f}{rw.var(ddof=1):10.4f}")
print(f"{'Langevin':10s}{lv.mean():10.4f}{lv.var(ddof=1):10.4f}")
