"""The kappa-ignorance measure as a g-expectation: exact on the tree,
approximate by regression Monte Carlo on Gaussian paths."""

import time

import numpy as np

from riskcontrib import Driver, RegressionBasis, brownian, build_tree, simulate_paths, solve_mc, solve_tree

tree = build_tree(16, 0.5)
B = brownian(tree)
sol = solve_tree(tree, -B.terminal, Driver.kappa(0.5))
print("tree Y0 =", sol.Y[0][0], " Z range:", min(z.min() for z in sol.Z), max(z.max() for z in sol.Z))

# closed form Y_t = -B_t + kappa (T - t)
k = 8
print("level 8 error:", np.abs(sol.Y[k] - (-B[k] + 0.5 * (0.5 - k * tree.dt))).max())

start = time.perf_counter()
ens = simulate_paths(42, 50, 100_000, 0.5)
res = solve_mc(ens, lambda paths: -paths[:, -1], Driver.kappa(0.5), RegressionBasis(2))
print(f"MC Y0 = {res.y0:.5f} +- {res.stderr:.5f} ({time.perf_counter() - start:.1f}s)")
print("mean Z at t=0.25:", res.Z[:, 25].mean())
