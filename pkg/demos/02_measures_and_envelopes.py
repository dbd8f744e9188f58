"""Coherent and deviation measures from risk envelopes, their axioms and
the way one determines the other."""

import numpy as np

from riskcontrib import (CVaREnvelope, MeasureFamily, axiom_suite, brownian, build_tree, coherent,
                         coherent_from_deviation, deviation, envelope_validate, kappa_envelope,
                         time_consistency_check)

tree = build_tree(8, 0.5)
B = brownian(tree).terminal

# kappa-ignorance: the price of risk ranges over [-kappa, kappa]
env = kappa_envelope(0.5)
print(envelope_validate(env, tree))
print("C_0(B_T) =", coherent(tree, B, env, 0).values[0])   # kappa T = 0.25
print("D_0(B_T) =", deviation(tree, B, env, 0).values[0])

# conditional values shrink as information arrives
for t in (0, 4, 8):
    print(t, deviation(tree, B, env, t).values.mean())

# the two families are linked by adding or removing the conditional mean
X = np.random.default_rng(0).standard_normal(tree.leaves)
D = deviation(tree, X, env, 3).values
print("C from D matches:", np.allclose(coherent_from_deviation(tree, X, D, 3), coherent(tree, X, env, 3).values))

# axiom probes on seeded random payoffs
for e in (env, CVaREnvelope(0.5)):
    rep = axiom_suite(MeasureFamily.from_envelope(tree, e, "deviation"), tree, seed=1, trials=50)
    print(rep.family, "ok" if rep.ok else rep.violations)

# CVaR is not time consistent: a two-step counterexample
small = build_tree(2, 0.5)
print("CVaR C3 gap:", time_consistency_check(small, CVaREnvelope(0.5), [2.0, 1.0, -1.0, -2.0], 0, 1).c3_max)
print("kappa C3 gap:", time_consistency_check(small, kappa_envelope(0.5), [2.0, 1.0, -1.0, -2.0], 0, 1).c3_max)
