"""Diffusion map of a Swiss roll: which coordinate tracks which direction.

    python3 demos/swiss_roll.py [m]
"""
import sys

from scipy.stats import spearmanr

from opt_manifold import diffusion_map
from opt_manifold.dmaps import make_swiss_roll

m = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
X, arc, height = make_swiss_roll(m, 0)
emb = diffusion_map(X, k=5, eps_method="knn", eps_k=10)
print(f"epsilon = {emb.kernel.epsilon:.4f}")
print(" j   lambda_j  |rho| arclength  |rho| height  harmonic")
for j in range(5):
    ra = abs(spearmanr(emb.coords[:, j], arc).statistic)
    rh = abs(spearmanr(emb.coords[:, j], height).statistic)
    print(f"{j + 1:2d}  {emb.eigenvalues[j + 1]:9.5f}  {ra:15.4f}  {rh:12.4f}  {bool(emb.harmonic_flags[j])}")
