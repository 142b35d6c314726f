"""Sparse phase retrieval by mirror descent in the hypentropy geometry."""

from .diagnostics import (
    AuditReport,
    ClaimAudit,
    StageReport,
    TrajectoryRecord,
    audit_theorem_invariants,
    detect_stages,
    record,
    sign_consistency,
)
from .geometry import (
    BregmanResult,
    HypentropyMap,
    Lemma1Report,
    bregman,
    bregman_definitional,
    dist,
    dist_bregman,
    lemma1_bounds,
)
from .harness import (
    CheckResult,
    ConfigError,
    ExperimentSpec,
    I0Mode,
    Storage,
    SweepCell,
    SweepSummary,
    TrialResult,
    emit_csv,
    read_trajectory_csv,
    run_batch,
    run_beta_sweep,
    run_m_sweep,
    run_self_checks,
    run_single,
)
from .problem import (
    InfeasibleSignalError,
    MeasurementSet,
    RiskEvaluation,
    SparseSignal,
    empirical_gradient,
    empirical_risk,
    estimate_signal_size,
    estimate_support_coordinate,
    evaluate_risk,
    generate_measurements,
    generate_signal,
    population_gradient,
    stream_rng,
)
from .solvers import (
    Algorithm,
    DegenerateInstanceError,
    DivergenceError,
    SolverConfig,
    SolverError,
    SolverState,
    StepScaleMode,
    StepSizeTooLargeError,
    initialize_factored,
    initialize_md,
    rk4_step,
    run,
    step_egpm,
    step_hwf,
    step_md_rk4,
)

__version__ = "0.1.0"
