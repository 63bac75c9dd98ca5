"""Prediction-powered conditional inference at a fixed test point."""

from .design import Allocation, BudgetProblem, optimal_allocation, two_stage_plan
from .estimators import (
    IdentifiabilityError,
    InferenceResult,
    LabeledSample,
    Method,
    RootNotFoundError,
    ScoreKind,
    ScoreSpec,
    UnlabeledSample,
    confidence_interval,
    empirical_moment,
    infer_global_ppi,
    infer_labeled_only,
    infer_ppci,
    jacobian_hat,
    score,
    score_derivative,
    solve_theta,
    variance_hat,
)
from .kernel import KernelFamily, KernelSpec, eval_kernel, gram_matrix, kernel_vector
from .weights import (
    CrossFitWeights,
    DegenerateLCurveError,
    LambdaGrid,
    WeightFunction,
    WeightMode,
    build_weights,
    eval_weight,
    fit_weight,
    lcurve_points,
    select_lambda_lcurve,
    spectral_precompute,
)

__version__ = "0.1.0"
