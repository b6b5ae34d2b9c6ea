"""Grid-based reduced gradient descent on the cylinder well.

    python3 demos/cylinder_descent.py [theta0]
"""
import math
import sys

from opt_manifold import OuterConfig, make_objective, run_grid
from opt_manifold.objectives import CylinderParams, from_cylindrical, to_cylindrical, well_global_minimizer
from opt_manifold.outer_loop import GRID, cylinder_chart

theta0 = float(sys.argv[1]) if len(sys.argv) > 1 else math.pi / 4
cyl = CylinderParams()
f = make_objective("cylinder_well", cyl)
cfg = OuterConfig(mode=GRID, n_coarse_iters=15, T=0.1, dt=2e-5)
h = run_grid(cfg, f, from_cylindrical(cyl.R, theta0, 0.0), 0, chart=cylinder_chart(cyl.R))
for i, r in enumerate(h.records, 1):
    rr, th, z = to_cylindrical(r.new_point)
    print(f"iter {i:2d}  evals {r.evals:9d}  theta {float(th):7.4f}  r {float(rr):.4f}  z {float(z):+.4f}")
print(f"status {h.status}; global minimizer theta* = {well_global_minimizer():.4f}")
