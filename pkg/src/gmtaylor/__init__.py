"""Risk of PDE quantities of interest via Gaussian-mixture Taylor surrogates.

Estimates mean, standard deviation, and CVaR of scalar outputs of models
with high-dimensional Gaussian inputs by splitting the input measure into a
Gaussian mixture along a dominant direction and building linear or low-rank
quadratic Taylor surrogates at the component means.
"""

from .measure import (
    Grid,
    CovarianceOperator,
    DenseCovariance,
    GaussianMeasure,
    KLBasis,
    SizeCapError,
    build_elliptic_covariance,
    calibrate_elliptic,
    correlation_length,
    kle,
)
from .split1d import (
    Split1D,
    equispaced_split,
    load_library,
    optimize_split,
    save_library,
    tv_1d,
)
from .mixture import (
    GaussianMixtureApprox,
    MixtureComponent,
    component_sample,
    recursive_split,
    split_along_direction,
    split_along_kle,
    tensor_split,
    tv_numeric_2d,
)
from .model import (
    AnalyticModel,
    QoIModel,
    SolveCounter,
    UnsupportedMomentsError,
    analytic_moments,
)
from .adr import ADRModel, NewtonDivergenceError
from .taylor import (
    SurrogateBuildError,
    TaylorSurrogate,
    build_linear,
    build_quadratic,
    dominant_hessian_direction,
    evaluate_surrogate,
    mixture_surrogates,
    sample_lowrank_quadratic,
    surrogate_mean,
    surrogate_sd,
    surrogate_second_moment,
)
from .eig import EigensolverError, randomized_ghep
from .risk import (
    BoundReport,
    CVaRConfig,
    MCFailureError,
    RiskEstimate,
    bound_diagnostics,
    cvar_gaussian_analytic,
    cvar_linear_gm,
    cvar_quadratic_gm,
    empirical_cvar,
    mc_baseline,
    mc_trials,
    mean_gm,
    relative_error,
    relative_rmse,
    var_gm,
    weighted_quantile,
)

__version__ = "0.1.0"
