"""Evidence estimation via nested-sampling and temperature-annealed SMC.

The package provides a particle engine for marginal-likelihood (evidence)
estimation and posterior expectations: classic and improved nested sampling,
fixed and adaptive threshold SMC, fixed and adaptive temperature annealing,
plus automated MCMC kernel calibration and a reproducible experiment
harness (see :mod:`nsmc.cli`).
"""

from .errors import (
    CapabilityError,
    ConfigError,
    ContractViolationError,
    DegenerateCloudError,
    DegenerateCloudWarning,
    NonProgressError,
    NsmcError,
    StuckRunError,
    StuckSliceWarning,
    ZeroSurvivorsError,
)
from .kernels import (
    KernelConfig,
    LikelihoodConstraint,
    MutationTarget,
    coord_rw_step,
    constrained_prior_target,
    default_step_candidates,
    mala_step,
    mutate,
    plain_target,
    rw_step,
    slice_step,
    tempered_target,
    two_stage_accept,
)
from .model import (
    ConjugateGaussianModel,
    FunctionModel,
    SphereMixtureModel,
    TargetModel,
    analytic_evidence_conjugate,
    build_model,
    log_ball_volume,
    sample_unit_ball,
    sphere_mixture_log_pdf,
)
from .ns import (
    CompressionSchedule,
    filling_in,
    ns_quadrature_weights,
    recompute_log_evidence,
    run_ns,
)
from .nssmc import (
    ThresholdSchedule,
    run_adaptive_nssmc,
    run_fixed_nssmc,
    threshold_quantile,
)
from .particles import (
    ParticleCloud,
    WeightedArchive,
    ess,
    normalize,
    weighted_estimate,
    weighted_quantile,
)
from .resampling import SCHEMES, resample
from .results import RunResult
from .tasmc import (
    TemperatureSchedule,
    next_temperature,
    run_adaptive_tasmc,
    run_fixed_tasmc,
)
from .tuning import (
    TuningReport,
    adaptive_repeats,
    j_desired,
    mahalanobis,
    select_step_scale,
)
from .cli import export_diagnostic_curve, run_experiment, wnv

__version__ = "0.1.0"
