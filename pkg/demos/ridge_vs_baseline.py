"""Ridge-following coarse steps against plain RWMH on the Bayesian ridge.

Reports how many objective evaluations each needs before the running best
reaches 0.99.

    python3 demos/ridge_vs_baseline.py [seed]
"""
import math
import sys

import numpy as np

from opt_manifold import OuterConfig, make_objective, run_baseline, run_ridge

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
f = make_objective("bayes_ridge")
start = np.array([0.0, math.sqrt(4.32)])
cfg = OuterConfig(n_coarse_iters=30, T=0.02, dt=0.005, n_accepted=1000)
coarse = run_ridge(cfg, f, start, seed)
plain = run_baseline(f, 300_000, cfg.sampler, start, seed)
for r in coarse.records:
    print(f"evals {r.evals:7d}  f {r.f_new:8.4f}  x {np.array2string(r.new_point, precision=3)}")
print(f"coarse: status {coarse.status}, f >= 0.99 after {coarse.first_reach(0.99)} evaluations")
print(f"RWMH:   f >= 0.99 after {plain.first_reach(0.99)} evaluations")
