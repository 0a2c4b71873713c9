"""Multiply robust estimation of natural direct and indirect effects.

The estimators target the partially linear mediation model

    E[Y | A, M, X] = theta1 M + theta2 A + g*(X),   E[M | A, X] = theta3 A + h*(X)

when an unmeasured factor confounds the mediator and the outcome. Identification
comes from heteroskedasticity of M in A; the augmented moment system stays
consistent if any one of three nuisance-model subsets is correctly specified.
"""

from .core import (
    Dataset,
    EffectReport,
    EtaParams,
    ModelSpec,
    NuisanceValues,
    Theta,
    effects_from_theta,
    gamma,
    phi_tilde,
    psi,
)
from .errors import (
    ConvergenceError,
    InputError,
    MedRobustError,
    NegativeVarianceError,
    RankDeficiencyError,
    SingularJacobianError,
    WeakIdentificationError,
)
from .estimators import (
    SolveOptions,
    SolveResult,
    certificate,
    solve,
    solve_bk,
    solve_hines,
    solve_mr,
    solve_mr_interaction,
    solve_ps,
)
from .inference import (
    BPResult,
    CovMatrix,
    VarianceConfig,
    bootstrap_cov,
    breusch_pagan,
    delta_nie,
    effect_report,
    lemma_cov,
    sandwich_cov,
    wald_ci,
)
from .nuisance import eval_nuisances, fit_eta_profile
from .simulation import (
    DgpConfig,
    McSummary,
    generate_dataset,
    misspecify_covariates,
    run_monte_carlo,
    scenario_data,
    scenario_spec,
)
from .systems import InteractionWeights, MomentSystem

__version__ = "0.1.0"

__all__ = [
    "BPResult",
    "ConvergenceError",
    "CovMatrix",
    "Dataset",
    "DgpConfig",
    "EffectReport",
    "EtaParams",
    "InputError",
    "InteractionWeights",
    "McSummary",
    "MedRobustError",
    "ModelSpec",
    "MomentSystem",
    "NegativeVarianceError",
    "NuisanceValues",
    "RankDeficiencyError",
    "SingularJacobianError",
    "SolveOptions",
    "SolveResult",
    "Theta",
    "VarianceConfig",
    "WeakIdentificationError",
    "bootstrap_cov",
    "breusch_pagan",
    "certificate",
    "delta_nie",
    "effect_report",
    "effects_from_theta",
    "eval_nuisances",
    "fit_eta_profile",
    "gamma",
    "generate_dataset",
    "lemma_cov",
    "misspecify_covariates",
    "phi_tilde",
    "psi",
    "run_monte_carlo",
    "sandwich_cov",
    "scenario_data",
    "scenario_spec",
    "solve",
    "solve_bk",
    "solve_hines",
    "solve_mr",
    "solve_mr_interaction",
    "solve_ps",
    "wald_ci",
]
