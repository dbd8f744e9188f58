"""Per-asset risk contributions of a dynamic portfolio and the checks that
they add back up to the total risk."""

import numpy as np

from riskcontrib import (AssetModel, KernelEnvelope, KernelSet, Policy, build_tree, contribution_time_consistency,
                         emit_plot, marginal_and_total_contributions, z_identity_check)

tree = build_tree(6, 1.0)
# two assets, the second with a drift and a level-dependent volatility
model = AssetModel(drift=[0.0, 0.05], diffusion=lambda k, n: np.array([1.0, 0.5 + 0.1 * k]), initial_prices=[1.0, 1.0])
policy = Policy.from_rule(tree, [1.0, 2.0], 2)
env = KernelEnvelope(KernelSet(-0.3, 0.6))

rep = marginal_and_total_contributions(tree, model, policy, env, 0)
print("C_0 =", rep.coherent_value[0], " D_0 =", rep.deviation_value[0])
print("aggregation residuals:", rep.residual_summary()["coherent_aggregation"],
      rep.residual_summary()["deviation_aggregation"])

# expected contribution of each asset per unit time
for a in range(2):
    path = [rep.contributions_deviation[k][:, a].mean() for k in range(tree.steps)]
    print(f"asset {a}:", np.round(path, 4))

print("Z identity:", z_identity_check(tree, model, policy, env, 0).as_dict())
print("marginals from t=0 and t=3 after rescaling:",
      contribution_time_consistency(tree, model, policy, env, 0, 3)["rescaled_coherent"])

series = {f"asset {a}": (tree.times()[:-1], [rep.contributions_deviation[k][:, a].mean() for k in range(tree.steps)])
          for a in range(2)}
print("wrote", emit_plot(series, "contributions.svg", title="mean deviation contribution", xlabel="t", ylabel="c"))
