"""Euler allocation of a portfolio standard deviation."""

import numpy as np

from riskcontrib import StaticPortfolio, static_stddev_contribution

cov = np.array([[0.04, 0.006, 0.0], [0.006, 0.09, -0.01], [0.0, -0.01, 0.0225]])
w = np.array([0.5, 0.3, 0.2])
total, marginals, contrib = static_stddev_contribution(StaticPortfolio(w, cov))
print("sigma_p      =", total)
print("marginals    =", marginals)
print("contributions=", contrib, "sum", contrib.sum())
