"""Conditional coherent and deviation risk measures with continuous-time risk contributions,
evaluated exactly on binary scenario trees and approximately by regression Monte Carlo."""

from .tree import (AdaptedProcess, CapacityError, PredictableProcess, ScenarioTree, brownian,
                   build_tree, cond_expectation, doleans_exponential, martingale_representation,
                   payoff, stochastic_integral)
from .market import AssetModel, Policy, WealthProcess, simulate_assets, wealth
from .envelopes import (CVaREnvelope, DensityProcess, Driver, KernelEnvelope, KernelSet,
                        ReferenceEnvelope, RiskEnvelope, cvar_density, envelope_validate,
                        extreme_densities, kappa_envelope, support_function)
from .bsde import (BsdeSolution, PathEnsemble, RegressionBasis, g_expectation, simulate_paths,
                   solve_mc, solve_tree)
from .measures import (MeasureFamily, MeasureResult, RecorderWeights, axiom_suite, coherent,
                       coherent_from_deviation, deviation, deviation_from_coherent,
                       endpoint_kernels, recorder_weights_from_kernels, time_consistency_check,
                       volatility_recorder)
from .contribution import (ContributionReport, ExposedFaceElement, StaticPortfolio,
                           contribution_time_consistency, doleans_loss_process, exposed_face,
                           marginal_and_total_contributions, static_stddev_contribution,
                           subdifferential_bounds, z_identity_check)
from .plot import emit_plot

__version__ = "0.1.0"
