"""A tour of the binary scenario tree: Brownian paths, conditional
expectations and the martingale representation of a payoff."""

import numpy as np

from riskcontrib import brownian, build_tree, cond_expectation, martingale_representation, stochastic_integral

tree = build_tree(4, 1.0)
print(f"{tree.steps} steps, dt = {tree.dt}, {tree.leaves} leaves")

# node i at level k has children 2i (up move) and 2i+1 (down move)
B = brownian(tree)
for k in range(tree.steps + 1):
    print(k, np.round(B[k], 3))

# a call-like payoff on the terminal Brownian value
X = np.maximum(B.terminal, 0.0)
print("E[X]        =", cond_expectation(tree, X, 0)[0])
print("E_2[X]      =", np.round(cond_expectation(tree, X, 2), 4))

# X = E[X] + sum sigma_k dB_k, node by node
mean, sigma = martingale_representation(tree, X)
rebuilt = mean[0][0] + stochastic_integral(tree, sigma, B).terminal
print("max rebuild error:", np.abs(rebuilt - X).max())
