"""Channel prediction with spatio-temporal electromagnetic kernels."""

from ._backend import BACKEND
from .bench import (
    ExperimentConfig,
    GrfChannelConfig,
    ResultRow,
    emit_csv,
    load_config,
    nmse,
    parse_config,
    parse_csv,
    run_horizon_sweep,
    run_snr_sweep,
)
from .channel_sim import (
    ChannelTrace,
    SvChannelConfig,
    add_awgn,
    coherence_time,
    doppler_shift,
    grf_sample_trace,
    steering_vector,
    sv_trace,
)
from .errors import DegenerateInput, InvalidArgument, NotPositiveDefinite, SingularSystem, StemError
from .learning import (
    FitReport,
    GemFitOptions,
    Observations,
    StemFitOptions,
    build_grid,
    default_grid,
    fit_gem_kl,
    fit_stem_kl,
    log_likelihood,
    loglik_grad_stem,
    lr_value,
    project_simplex,
    surrogate_grad,
    surrogate_value,
)
from .numerics import (
    complex_pseudonorm,
    hermitian_logdet_and_solve,
    sphere_quadrature_emcf,
    spherical_bessel_j,
)
from .predictor import (
    PredictionResult,
    ar_fit,
    ar_predict,
    gpr_predict,
    mmse_estimate,
    no_prediction,
    pvec_fit_predict,
)
from .stem_kernel import (
    AntennaArray,
    Coords,
    GemHyper,
    SpacetimePoint,
    StemHyper,
    correlation_matrix,
    gem_entry,
    scalar_entry,
    stem_cf,
    stem_cf_grad,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
