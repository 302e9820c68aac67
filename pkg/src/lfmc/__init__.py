"""Actively learned low-fidelity model combination for rare-event estimation.

The package corrects an ensemble of cheap models toward one expensive model
with per-model GP discrepancies, combines them through local model
probabilities (averaged, deterministically selected, or stochastically
sampled), and drives subset simulation with the assembled surrogate,
falling back to the expensive model only where the surrogate is unsure.
"""

from .assembly import (STRATEGIES, ModelEnsemble, ModelHandle,
                       SurrogateEvaluation, classify, evaluate_surrogate,
                       misclassification_prob)
from .benchmarks import (BENCHMARKS, BenchmarkSpec, four_branch_hf,
                         four_branch_lf, make_benchmark_ensemble, rastrigin_hf,
                         rastrigin_type1_lf, rastrigin_type2_lf)
from .distributions import StandardNormal
from .errors import (ConfigError, FitFailureError, InputError,
                     ModelEvaluationError, NonConvergenceError, ProtocolError,
                     QuadratureError, SeedSelectionError)
from .external import ExternalModel, ExternalModelSpec
from .gp import CorrectionGP, DuplicateTrainingPointWarning, KernelConfig
from .model_probability import (CostModel, FoldedGaussianParams,
                                cost_biased_probabilities, folded_cdf,
                                folded_pdf, local_model_probabilities,
                                normalize_costs)
from .subset import (ChainState, ClassicalResult, FailureEstimate, RunConfig,
                     SubsetRecord, classical_subset_simulation,
                     conditional_delta, first_subset_delta, initial_phase,
                     mcmc_propose, point_failure_probability, run,
                     run_first_subset, run_subsequent_subset)

__version__ = "0.1.0"

__all__ = [
    "STRATEGIES", "ModelEnsemble", "ModelHandle", "SurrogateEvaluation",
    "classify", "evaluate_surrogate", "misclassification_prob",
    "BENCHMARKS", "BenchmarkSpec", "four_branch_hf", "four_branch_lf",
    "make_benchmark_ensemble", "rastrigin_hf", "rastrigin_type1_lf",
    "rastrigin_type2_lf", "StandardNormal",
    "ConfigError", "FitFailureError", "InputError", "ModelEvaluationError",
    "NonConvergenceError", "ProtocolError", "QuadratureError",
    "SeedSelectionError", "ExternalModel", "ExternalModelSpec",
    "CorrectionGP", "DuplicateTrainingPointWarning", "KernelConfig",
    "CostModel", "FoldedGaussianParams", "cost_biased_probabilities",
    "folded_cdf", "folded_pdf", "local_model_probabilities",
    "normalize_costs", "ChainState", "ClassicalResult", "FailureEstimate",
    "RunConfig", "SubsetRecord", "classical_subset_simulation",
    "conditional_delta", "first_subset_delta", "initial_phase",
    "mcmc_propose", "point_failure_probability", "run", "run_first_subset",
    "run_subsequent_subset",
]
