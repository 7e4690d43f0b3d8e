"""Maximum-likelihood estimation for mixed logistic models with two
crossed random-effect factors.

The package provides exact (structured Gauss-Hermite) and Monte-Carlo
marginal likelihoods, subset-data estimators built on independent data
slices, a data-cloning MLE, exact-enumeration information diagnostics on
tiny designs, identification checks, and a reproducible simulation-study
harness with a CLI front end (``crossedglmm --help``).
"""

from .model import (
    CrossedDesign,
    RandomEffects,
    ResponseTable,
    SubsetKind,
    SubsetSpec,
    Theta,
    complete_data_loglik,
    conditional_mass,
    full_crossing,
    logistic,
    logit,
    salamander_style,
)
from .quadrature import (
    DEFAULT_ORDER,
    QuadratureRule,
    TensorCapError,
    expect_1d,
    expect_bivariate,
    expect_tensor,
    gauss_hermite,
)
from .likelihood import (
    LikelihoodValue,
    loglik_gradient_fd,
    m_function,
    marginal_loglik_exact,
    marginal_loglik_mc,
    offdiag_pair_loglik,
    p0,
    p_gamma_11,
    subset_diag_loglik,
    subset_pair_loglik,
)
from .estimators import (
    BoundaryError,
    CloneConfig,
    DcResult,
    FitResult,
    fit_dc_mle,
    fit_finite_mle,
    fit_full_mle,
    fit_subset_mle,
    optimize_scalar,
    optimize_simplex,
)
from .information import (
    EnumeratedModel,
    InfoMatrices,
    SubsetInequalityReport,
    check_subset_inequality,
    enumerate_model,
    fisher_info,
    info_loss,
    subset_fisher_info,
)
from .identify import (
    KlReport,
    check_b2_grid,
    check_m_injective,
    check_slepian_monotone,
    kl_subset,
)
from .harness import (
    StudyConfig,
    StudyRow,
    default_clone_config,
    derive_seed,
    limiting_demo,
    mix64,
    run_study,
    simulate,
    study_to_csv,
)

__version__ = "0.1.0"

__all__ = [
    "CrossedDesign",
    "RandomEffects",
    "ResponseTable",
    "SubsetKind",
    "SubsetSpec",
    "Theta",
    "complete_data_loglik",
    "conditional_mass",
    "full_crossing",
    "logistic",
    "logit",
    "salamander_style",
    "DEFAULT_ORDER",
    "QuadratureRule",
    "TensorCapError",
    "expect_1d",
    "expect_bivariate",
    "expect_tensor",
    "gauss_hermite",
    "LikelihoodValue",
    "loglik_gradient_fd",
    "m_function",
    "marginal_loglik_exact",
    "marginal_loglik_mc",
    "offdiag_pair_loglik",
    "p0",
    "p_gamma_11",
    "subset_diag_loglik",
    "subset_pair_loglik",
    "BoundaryError",
    "CloneConfig",
    "DcResult",
    "FitResult",
    "fit_dc_mle",
    "fit_finite_mle",
    "fit_full_mle",
    "fit_subset_mle",
    "optimize_scalar",
    "optimize_simplex",
    "EnumeratedModel",
    "InfoMatrices",
    "SubsetInequalityReport",
    "check_subset_inequality",
    "enumerate_model",
    "fisher_info",
    "info_loss",
    "subset_fisher_info",
    "KlReport",
    "check_b2_grid",
    "check_m_injective",
    "check_slepian_monotone",
    "kl_subset",
    "StudyConfig",
    "StudyRow",
    "default_clone_config",
    "derive_seed",
    "limiting_demo",
    "mix64",
    "run_study",
    "simulate",
    "study_to_csv",
]
