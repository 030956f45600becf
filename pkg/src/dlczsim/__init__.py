"""Cavity-enhanced DLCZ entanglement source: models, simulation, repeater rates."""

from .model import (
    CANONICAL_SETTINGS,
    CavityParams,
    CoincidenceCounts,
    DecayModel,
    DetectionChain,
    Estimate,
    JointProbabilities,
    MeasurementSettings,
    RetrievalEstimates,
    SourceParams,
    TSIRELSON_BOUND,
    bell_parameter,
    cavity_fsr,
    coincidence_probabilities,
    correlation_E,
    escape_efficiency,
    estimate_intrinsic_retrieval,
    expected_bell,
    expected_correlation,
    fidelity_from_bell,
    retrieval_efficiency,
    total_detection_efficiency,
    visibility,
)
from .montecarlo import (
    BootstrapErrors,
    ClickRecord,
    SeedSpec,
    SequenceConfig,
    TrialRunResult,
    bootstrap_errors,
    run_trials,
    sweep_storage_time,
    write_record_dump,
)
from .repeater import (
    RateCurve,
    RatePoint,
    RepeaterParams,
    calibration_report,
    crossing_distance,
    elementary_probability,
    repeater_rate,
    swap_chain,
    sweep_distance,
)
from .calibration import (
    BellFit,
    DataPoint,
    DecayFit,
    default_decay_model,
    default_source_params,
    fit_bell_model,
    fit_decay,
)
from .errors import (
    FitConvergenceError,
    InsufficientStatisticsError,
    NotBracketedError,
)

__version__ = "0.1.0"
