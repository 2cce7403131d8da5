"""Observation/reconstruction laboratory for reference-medium residuals in
single-snapshot FDA-MIMO GPR."""

__version__ = "0.1.0"

from .errors import ConfigError, DomainError, FdaLabError, NumericalError
from .geometry import ArrayGeometry, Grid, build_array, build_grid
from .media import (
    ColeColeParams,
    MediumField,
    MismatchBias,
    ReferenceSpec,
    ResidualModel,
    SCENES,
    build_reference_field,
    cole_cole_eval,
    list_scenes,
    project_physical,
    residual_mean_field,
    residual_model,
    sample_residual,
    scene_params,
)
from .forward import (
    ChannelOperator,
    CodedChannel,
    CodingPattern,
    ObservationResponse,
    PropagationMatrix,
    assemble_H,
    channel_response,
    coding_path,
    contrast_vector,
    halfspace_kernel,
    kernel_feedback,
    stacked_response,
)
from .stats import (
    HermitianCovariance,
    SpectralSummary,
    block,
    block_coupling_metrics,
    frequency_block_discrepancy,
    sample_mean_cov,
    spectral_summary,
)
from .recon import (
    CrossFrequencyTransfer,
    RhsCovariance,
    RhsPerturbation,
    TikhonovReceiver,
    build_H_an,
    cross_frequency_transfer,
    error_decomposition,
    path_coherence,
    receiver_norm,
    recon_moments,
    resolution_error,
    rhs_covariance,
    rhs_perturbation,
    tikhonov_apply,
)
from .downstream import (
    AnomalyTemplate,
    DetectionResult,
    ReconQuality,
    anomaly_template,
    approximate_covariance,
    detection_eval,
    recon_quality,
    whitening_error,
)
from .harness import (
    ExperimentConfig,
    StudyCase,
    derive_rng,
    load_config,
    run_downstream_study,
    run_observation_study,
    run_recon_study,
    write_study_tables,
)
