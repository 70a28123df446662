"""Telemetry forecasting twin: TCN forecaster, Mahalanobis anomaly detection,
Shapley-value channel attribution, and deterministic SVG reporting."""

from .aggregate import (
    DependenceData,
    ExplanationSet,
    FeatureCloud,
    ForceSegments,
    beeswarm_data,
    dependence_data,
    force_data,
    global_importance,
)
from .anomaly import (
    AnomalyVerdict,
    ErrorModel,
    fit_error_model,
    fit_from_residuals,
    mahalanobis,
    mahalanobis_batch,
    score_batch,
    score_window,
)
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    DataError,
    InvariantViolation,
    TwinxError,
)
from .forecaster import (
    TcnArch,
    TcnModel,
    TrainConfig,
    TrainReport,
    forward,
    forward_batch,
    init_model,
    loss_and_grads,
    receptive_field,
    train,
)
from .persist import load_bundle, save_bundle
from .render import (
    ChartStyle,
    render_bar,
    render_beeswarm,
    render_dependence,
    render_force,
)
from .shapley import (
    ExplainConfig,
    Explanation,
    coalition_value,
    exact_shapley,
    explain_instance,
    kernel_shap,
)
from .synth import Injection, SynthConfig, synth_generate
from .telemetry import (
    ChannelSchema,
    ScalerParams,
    TelemetryFrame,
    WindowedDataset,
    apply_scaler,
    clean,
    default_schema,
    fit_scaler,
    invert_scaler,
    load_csv,
    make_windows,
    split_chronological,
    window_count,
    write_csv,
)

__version__ = "0.1.0"
