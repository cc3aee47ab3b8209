"""Numerical laboratory for conformal metric flows on flat n-tori.

Pseudo-spectral discretization of the fast-diffusion evolution of a
conformal factor, with curvature audits, exact-identity residuals, and a
desk-scale stability experiment over a decreasing curvature-floor schedule.
"""

from .grid import (
    GridMismatchError,
    PeriodicGrid,
    ScalarField,
    SpectralWorkspace,
    field_from_fn,
    grad_inner,
    integrate,
    laplacian_fd,
    laplacian_spectral,
    make_grid,
)
from .conformal import (
    Background,
    BackgroundMismatchError,
    ConformalMetric,
    PositivityError,
    conformal_laplacian,
    diameter_estimate,
    ipow,
    log_mean_field,
    lp_norm,
    metric_lp_distance,
    moser_product,
    scalar_curvature,
    volume,
)
from .flow import (
    FlowConfig,
    FlowDegeneracyError,
    FlowError,
    FlowInstabilityError,
    FlowResult,
    FlowState,
    Trajectory,
    run_flow,
    stable_dt,
    step_rk4,
    yamabe_rhs,
)
from .diagnostics import (
    CSV_HEADER,
    AssumptionsAudit,
    DiagnosticsRecord,
    assumptions_check,
    flat_distance,
    lp_convergence_check,
    min_R_monotonicity,
    scalar_evolution_residual,
    trajectory_records,
    volume_drift_fit,
    volume_identity_residual,
)
from .experiment import (
    CalibrationError,
    ConfigError,
    ExperimentConfig,
    SequenceError,
    SequenceResult,
    calibrate_delta_family,
    config_to_text,
    gen_bandlimited,
    p0_threshold,
    parse_config,
    run_experiment,
    run_sequence_experiment,
)
from .outputs import (
    emit_outputs,
    read_field_snapshot,
    read_trajectory_csv,
    write_field_snapshot,
    write_trajectory_csv,
)

__version__ = "0.1.0"
