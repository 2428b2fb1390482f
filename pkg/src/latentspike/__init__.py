"""Point-process GLM fitting for multi-neuron spike trains with latent inputs.

Fits a generalized-linear point-process model (baseline + self-history +
cross-neuron coupling, exponential link) jointly with the activities of
unobserved background sources injected through fixed non-negative kernels,
using two closed-form multiplicative fixed points inside an EM-style loop.
Also simulates spike trains from the same model family for end-to-end
parameter-recovery validation.
"""

from .errors import FormatError, GenerationError, NumericRangeError
from .model import (
    ExpParams,
    FitConfig,
    FitReport,
    GlmParams,
    LatentInputs,
    SpikeTrain,
    covariate_dim,
    covariate_slots,
    covariate_vector,
    history_intensity,
    history_log_intensity,
    intensity,
    latent_intensity,
    latent_log_intensity,
    log_likelihood,
    penalized_objective,
)
from .estimator import (
    FitResult,
    GlmStepResult,
    GlmWorkspace,
    LatentStepResult,
    LatentWorkspace,
    contraction_diagnostic,
    fit_em,
    fit_without_latents,
    glm_log_gradient,
    glm_step_precompute,
    glm_step_update,
    latent_step_precompute,
    latent_step_update,
    latent_stationarity,
    solve_glm_params,
    solve_latent_activity,
)
from .simulate import (
    CouplingEdge,
    GenerationStats,
    IntrinsicKernel,
    LatentEdge,
    NetworkSpec,
    SimulationResult,
    build_network,
    generate_spikes,
    load_preset,
    sample_log_gamma,
    simulate_experiment,
)
from .dataio import (
    EventList,
    ModelDocument,
    bin_events,
    read_events_csv,
    read_model,
    read_spike_csv,
    read_trace_csv,
    rebin,
    write_events_csv,
    write_model,
    write_spike_csv,
    write_trace_csv,
)

__version__ = "0.1.0"
