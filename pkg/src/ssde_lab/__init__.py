"""Simulation and inference for state space stochastic differential equations."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    AssumptionViolation,
    ConfigError,
    DegenerateWeightsError,
    DivisionGuardError,
    InsufficientSampleError,
    InvalidArgumentError,
    InvalidStartError,
    NumericDomainError,
    PreconditionViolation,
    SimulationBlowup,
    SSDEError,
)
from .model import (  # noqa: E402
    ObservationWindow,
    ParamMaps,
    RatioBounds,
    StateSpaceModel,
    check_growth_bounds,
    eval_maps,
    make_window,
)
from .simulate import (  # noqa: E402
    PathPair,
    TimeGrid,
    simulate_batch,
    simulate_latent_batch,
    simulate_pair,
    wiener_increments,
)
from .likelihood import (  # noqa: E402
    MarginalLikelihood,
    SuffStats,
    approx_loglik,
    cond_loglik,
    j_rate,
    kl_rate_h,
    likelihood_log_bounds,
    marginal_loglik_mc,
    residual_stats,
    suff_stats_discrete,
)
from .mle import (  # noqa: E402
    FitResult,
    clt_standardize,
    fisher_info,
    fit_mle,
    g_gradient,
    g_hessian,
    g_objective,
)
from .presets import get_preset, list_presets  # noqa: E402
