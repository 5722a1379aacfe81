"""Glass-box Bayesian optimization.

Proposals are explained online by Shapley attributions over the
acquisition function, split into exploitation, epistemic-exploration and
aleatoric-avoidance parts, with a collaborative mode in which a human
(or a simulated one) may override proposals under alignment criteria.
"""

from .acquisition import (
    AcquisitionBreakdown,
    AcquisitionSpec,
    ModelBundle,
    eval_cb,
    eval_racb,
    eval_uacb,
    minimize_acquisition,
)
from .benchmarks import TargetSpec, gp_utility, hetero_ellipsoid, hetero_noise_scale, hyper_ellipsoid, make_target
from .explain import (
    InformativenessPath,
    ShapleyReport,
    explain_iteration,
    informativeness_path,
    report_linearity_check,
)
from .harness import AgentSpec, BatchResult, ExperimentConfig, regret_curve, run_batch
from .loop import (
    BoConfig,
    Decision,
    HumanModel,
    InterventionPolicy,
    RunTrace,
    decide_intervention,
    run_bo,
    run_collaborative,
    simulate_human,
)
from .shapley import (
    AdequacyVerdict,
    AttributionEstimate,
    ShapleyGame,
    check_sample_size,
    compute_payout,
    estimate_shapley,
    exact_shapley,
    find_sufficient_k,
)
from .space import Design, Observation, ParamSpace
from .surrogate import (
    GpPosterior,
    ImpreciseGpPosterior,
    KernelConfig,
    NoiseModel,
    SurrogateError,
    estimate_hyperparams,
    fit_gp,
    fit_imprecise_gp,
    fit_noise_model,
    predict,
)
from .tree import TreeRule, fit_tree_rule

__version__ = "0.1.0"

__all__ = [
    "AcquisitionBreakdown",
    "AcquisitionSpec",
    "AdequacyVerdict",
    "AgentSpec",
    "AttributionEstimate",
    "BatchResult",
    "BoConfig",
    "Decision",
    "Design",
    "ExperimentConfig",
    "GpPosterior",
    "HumanModel",
    "ImpreciseGpPosterior",
    "InformativenessPath",
    "InterventionPolicy",
    "KernelConfig",
    "ModelBundle",
    "NoiseModel",
    "Observation",
    "ParamSpace",
    "RunTrace",
    "ShapleyGame",
    "ShapleyReport",
    "SurrogateError",
    "TargetSpec",
    "TreeRule",
    "check_sample_size",
    "compute_payout",
    "decide_intervention",
    "estimate_hyperparams",
    "estimate_shapley",
    "eval_cb",
    "eval_racb",
    "eval_uacb",
    "exact_shapley",
    "explain_iteration",
    "find_sufficient_k",
    "fit_gp",
    "fit_imprecise_gp",
    "fit_noise_model",
    "fit_tree_rule",
    "gp_utility",
    "hetero_ellipsoid",
    "hetero_noise_scale",
    "hyper_ellipsoid",
    "informativeness_path",
    "make_target",
    "minimize_acquisition",
    "predict",
    "regret_curve",
    "report_linearity_check",
    "run_batch",
    "run_bo",
    "run_collaborative",
    "simulate_human",
]
