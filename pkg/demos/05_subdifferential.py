"""Directional derivatives of a coherent measure and their exposed-face bounds."""

import numpy as np

from riskcontrib import build_tree, kappa_envelope, subdifferential_bounds

tree = build_tree(5, 1.0)
rng = np.random.default_rng(3)
X, Y = rng.standard_normal(tree.leaves), rng.standard_normal(tree.leaves)

sb = subdifferential_bounds(tree, X, Y, kappa_envelope(0.5), 0)
print("bounds:", sb.lower[0], sb.upper[0], " tie nodes:", sb.ties)
for th, p in sb.probes.items():
    print(f"theta {th:+.0e}: quotient {p['coherent'][0]:.6f} ok={p['ok']} left_face={p['left_face']}")

# at X = 0 every node is a tie and the derivative is the measure of Y itself
sb = subdifferential_bounds(tree, np.zeros(tree.leaves), Y, kappa_envelope(0.5), 0)
print("all ties:", sb.ties, "upper", sb.upper[0], "lower", sb.lower[0])
