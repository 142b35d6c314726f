"""Experiment harness: seeded trials, sweeps, and CSV artifacts.

A trial is fully determined by (spec, seed): the seed feeds the signal
and measurement streams (beta and the algorithm never touch them, so
sweeping beta reuses the exact same instance), the solver runs from the
standard initialization, and the recorded trajectory lands in a CSV
whose bytes are reproducible across runs and across worker counts.
Sweeps fan trials out over a process pool; every trial owns its output
file and results are aggregated in job order, so parallelism cannot
reorder or perturb any artifact.

Trajectory CSV schema (header mandatory, LF line endings, floats in
shortest round-trip form):

    step,algo_time,risk,rel_dist,rel_bregman,off_support_l1,
    min_support_ratio,norm_sq,inner_ratio
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import partial
from multiprocessing import get_context
from typing import Optional, Sequence

import numpy as np

from .diagnostics import (
    AuditReport,
    StageReport,
    TrajectoryRecord,
    audit_theorem_invariants,
    detect_stages,
)
from .geometry import HypentropyMap, bregman, bregman_definitional, lemma1_bounds
from .problem import (
    empirical_gradient,
    empirical_risk,
    estimate_support_coordinate,
    generate_measurements,
    generate_signal,
)
from .solvers import (
    Algorithm,
    SolverConfig,
    SolverError,
    StepScaleMode,
    initialize_factored,
    initialize_md,
    rk4_step,
    run,
    step_egpm,
)

CSV_COLUMNS = (
    "step",
    "algo_time",
    "risk",
    "rel_dist",
    "rel_bregman",
    "off_support_l1",
    "min_support_ratio",
    "norm_sq",
    "inner_ratio",
)

# Dense sensing matrices above this entry count must use regenerated
# storage; 1e8 float64 entries is 800 MB.
DENSE_ENTRY_LIMIT = 10**8


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class I0Mode(str, Enum):
    ESTIMATE = "estimate"
    ORACLE = "oracle"


class Storage(str, Enum):
    DENSE = "dense"
    STREAM = "stream"


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a trial needs except the seed.

    beta_grid / m_grid are only read by the corresponding sweep;
    min_component constrains the planted signal's smallest normalized
    magnitude (see generate_signal).
    """

    n: int
    k: int
    m: int
    seeds: tuple[int, ...] = (0,)
    algorithm: Algorithm = Algorithm.HWF
    beta: float = 1e-10
    eta: float = 0.1
    max_steps: int = 20000
    step_scale_mode: StepScaleMode = StepScaleMode.SIGNAL_CUBED
    stop_tol: Optional[float] = None
    record_every: int = 10
    beta_grid: tuple[float, ...] = ()
    m_grid: tuple[int, ...] = ()
    i0_mode: I0Mode = I0Mode.ESTIMATE
    delta_audit: float = 0.01
    output_dir: str = "results"
    success_threshold: float = 1e-3
    min_component: Optional[float] = None
    storage: Storage = Storage.DENSE

    def __post_init__(self) -> None:
        try:
            SolverConfig(
                algorithm=self.algorithm,
                beta=self.beta,
                eta=self.eta,
                max_steps=self.max_steps,
                step_scale_mode=self.step_scale_mode,
                stop_tol=self.stop_tol,
                record_every=self.record_every,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.m < 1 or any(m < 1 for m in self.m_grid):
            raise ConfigError("m must be at least 1")
        if len(self.seeds) == 0:
            raise ConfigError("at least one seed is required")
        if any(not b > 0 for b in self.beta_grid):
            raise ConfigError("beta grid values must be positive")
        if not self.delta_audit > 0:
            raise ConfigError("delta_audit must be positive")
        if not self.success_threshold > 0:
            raise ConfigError("success_threshold must be positive")
        if self.min_component is not None and not self.min_component > 0:
            raise ConfigError("min_component must be positive when given")


@dataclass(frozen=True)
class TrialResult:
    """One trial's outcome; error holds the failure reason, else None."""

    seed: int
    beta: float
    m: int
    csv_path: str
    report: Optional[StageReport]
    audit: Optional[AuditReport]
    error: Optional[str]
    success: bool


@dataclass(frozen=True)
class SweepCell:
    algorithm: str
    n: int
    k: int
    m: int
    beta: float
    eta: float
    trials: int
    successes: int
    median_final_rel_dist: float
    median_t1_step: float
    audit_pass_rate: float


@dataclass(frozen=True)
class SweepSummary:
    cells: tuple[SweepCell, ...]
    trials: tuple[TrialResult, ...]
    summary_path: str


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(records: Sequence[TrajectoryRecord], path: str) -> None:
    """Write a trajectory CSV; parsing it back reproduces the records."""
    with open(path, "w", newline="") as f:
        f.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            row = (
                str(r.step_index),
                repr(r.algo_time),
                repr(r.risk),
                repr(r.rel_dist),
                repr(r.rel_bregman),
                repr(r.off_support_l1),
                repr(r.min_support_ratio),
                repr(r.norm_sq),
                repr(r.inner_ratio),
            )
            f.write(",".join(row) + "\n")


def read_trajectory_csv(path: str) -> list[TrajectoryRecord]:
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise ValueError(f"unexpected trajectory header in {path}: {header}")
        out = []
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"malformed row in {path}: {row}")
            out.append(
                TrajectoryRecord(
                    step_index=int(row[0]),
                    algo_time=float(row[1]),
                    risk=float(row[2]),
                    rel_dist=float(row[3]),
                    rel_bregman=float(row[4]),
                    off_support_l1=float(row[5]),
                    min_support_ratio=float(row[6]),
                    norm_sq=float(row[7]),
                    inner_ratio=float(row[8]),
                )
            )
    return out


def trial_csv_name(spec: ExperimentSpec, beta: float, m: int, seed: int) -> str:
    return (
        f"trial_{spec.algorithm.value}_n{spec.n}_k{spec.k}_m{m}"
        f"_beta{beta:g}_eta{spec.eta:g}_seed{seed}.csv"
    )


def run_single(
    spec: ExperimentSpec,
    seed: int,
    beta: Optional[float] = None,
    m: Optional[int] = None,
) -> TrialResult:
    """Run one seeded trial and write its trajectory CSV.

    beta and m default to the spec's values; sweeps pass overrides.
    Solver failures (divergence, oversized steps, degenerate instances)
    are recorded on the result, not raised; the partial trajectory up
    to the failure still lands in the CSV.
    """
    beta = spec.beta if beta is None else beta
    m = spec.m if m is None else m
    if spec.storage is Storage.DENSE and spec.n * m > DENSE_ENTRY_LIMIT:
        raise ConfigError(
            f"n*m = {spec.n * m} entries exceeds the dense sensing limit "
            f"({DENSE_ENTRY_LIMIT}); set storage to 'stream' to regenerate "
            "rows on the fly"
        )
    signal = generate_signal(spec.n, spec.k, seed, min_component=spec.min_component)
    meas = generate_measurements(
        signal, m, seed, materialize=spec.storage is Storage.DENSE
    )
    if spec.i0_mode is I0Mode.ORACLE:
        mags = np.abs(signal.values[signal.support])
        i0 = int(signal.support[int(np.argmax(mags))])
    else:
        i0 = estimate_support_coordinate(meas)
    config = SolverConfig(
        algorithm=spec.algorithm,
        beta=beta,
        eta=spec.eta,
        max_steps=spec.max_steps,
        step_scale_mode=spec.step_scale_mode,
        stop_tol=spec.stop_tol,
        record_every=spec.record_every,
    )
    records: list[TrajectoryRecord] = []
    error = None
    try:
        run(meas, config, i0, records.append, signal)
    except SolverError as e:
        error = f"{type(e).__name__}: {e}"
    os.makedirs(spec.output_dir, exist_ok=True)
    csv_path = os.path.join(spec.output_dir, trial_csv_name(spec, beta, m, seed))
    emit_csv(records, csv_path)
    report = detect_stages(records, spec.delta_audit) if records else None
    audit = (
        audit_theorem_invariants(records, signal, m, spec.delta_audit)
        if records
        else None
    )
    success = (
        error is None
        and report is not None
        and report.final_rel_dist <= spec.success_threshold
    )
    return TrialResult(
        seed=seed,
        beta=beta,
        m=m,
        csv_path=csv_path,
        report=report,
        audit=audit,
        error=error,
        success=success,
    )


def _trial_job(spec: ExperimentSpec, job: tuple[float, int, int]) -> TrialResult:
    beta, m, seed = job
    return run_single(spec, seed, beta=beta, m=m)


def _execute(
    spec: ExperimentSpec, jobs: list[tuple[float, int, int]], workers: int
) -> list[TrialResult]:
    if workers <= 1:
        return [_trial_job(spec, job) for job in jobs]
    # spawn rather than fork: BLAS thread pools do not survive forking.
    ctx = get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(partial(_trial_job, spec), jobs, chunksize=1))


def _median(values: list[float]) -> float:
    if not values:
        return float("nan")
    return float(np.median(values))


def _summarize(
    spec: ExperimentSpec,
    cells: list[tuple[float, int]],
    results: list[TrialResult],
    summary_name: str,
) -> SweepSummary:
    rows = []
    for beta, m in cells:
        cell_trials = [r for r in results if r.beta == beta and r.m == m]
        done = [r for r in cell_trials if r.error is None]
        rows.append(
            SweepCell(
                algorithm=spec.algorithm.value,
                n=spec.n,
                k=spec.k,
                m=m,
                beta=beta,
                eta=spec.eta,
                trials=len(cell_trials),
                successes=sum(r.success for r in cell_trials),
                median_final_rel_dist=_median(
                    [r.report.final_rel_dist for r in done if r.report]
                ),
                median_t1_step=_median(
                    [
                        float(r.report.t1_step)
                        for r in done
                        if r.report and r.report.t1_step is not None
                    ]
                ),
                audit_pass_rate=(
                    sum(1 for r in done if r.audit and r.audit.all_ok)
                    / len(cell_trials)
                    if cell_trials
                    else float("nan")
                ),
            )
        )
    os.makedirs(spec.output_dir, exist_ok=True)
    summary_path = os.path.join(spec.output_dir, summary_name)
    header = (
        "algorithm,n,k,m,beta,eta,trials,successes,"
        "median_final_rel_dist,median_t1_step,audit_pass_rate"
    )
    with open(summary_path, "w", newline="") as f:
        f.write(header + "\n")
        for c in rows:
            f.write(
                ",".join(
                    _format_value(v)
                    for v in (
                        c.algorithm,
                        c.n,
                        c.k,
                        c.m,
                        c.beta,
                        c.eta,
                        c.trials,
                        c.successes,
                        c.median_final_rel_dist,
                        c.median_t1_step,
                        c.audit_pass_rate,
                    )
                )
                + "\n"
            )
    return SweepSummary(
        cells=tuple(rows), trials=tuple(results), summary_path=summary_path
    )


def run_batch(spec: ExperimentSpec, workers: int = 1) -> SweepSummary:
    """All seeds at the spec's own (beta, m)."""
    cells = [(spec.beta, spec.m)]
    jobs = [(spec.beta, spec.m, s) for s in spec.seeds]
    results = _execute(spec, jobs, workers)
    return _summarize(spec, cells, results, "summary_run.csv")


def run_beta_sweep(spec: ExperimentSpec, workers: int = 1) -> SweepSummary:
    """Grid over beta, every seed per value; instances shared across beta."""
    if not spec.beta_grid:
        raise ConfigError("beta_grid is empty")
    cells = [(b, spec.m) for b in spec.beta_grid]
    jobs = [(b, spec.m, s) for b in spec.beta_grid for s in spec.seeds]
    results = _execute(spec, jobs, workers)
    return _summarize(spec, cells, results, "summary_beta.csv")


def run_m_sweep(spec: ExperimentSpec, workers: int = 1) -> SweepSummary:
    """Grid over the measurement count, every seed per value."""
    if not spec.m_grid:
        raise ConfigError("m_grid is empty")
    cells = [(spec.beta, m) for m in spec.m_grid]
    jobs = [(spec.beta, m, s) for m in spec.m_grid for s in spec.seeds]
    results = _execute(spec, jobs, workers)
    return _summarize(spec, cells, results, "summary_m.csv")


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _fd_gradient(f, x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def run_self_checks(seed: int = 0) -> list[CheckResult]:
    """Small in-process validation battery behind the check subcommand."""
    out = []
    rng = np.random.default_rng(seed)

    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(5, 20))
        sig = generate_signal(n, min(3, n), int(rng.integers(0, 2**31)))
        meas = generate_measurements(sig, 40, int(rng.integers(0, 2**31)))
        x = rng.standard_normal(n)
        g = empirical_gradient(x, meas)
        fd = _fd_gradient(lambda z: empirical_risk(z, meas), x, 1e-5)
        worst = max(worst, float(np.max(np.abs(fd - g))) / float(np.max(np.abs(g))))
    out.append(
        CheckResult(
            "gradient_matches_finite_differences", worst <= 1e-6, f"max rel err {worst:.2e}"
        )
    )

    worst = 0.0
    for beta in (1e-14, 1e-6, 1.0):
        hyp = HypentropyMap(beta)
        x = rng.uniform(0.2, 2.0, size=12) * rng.choice([-1.0, 1.0], size=12)
        fd = _fd_gradient(hyp.potential, x, 1e-6)
        worst = max(
            worst,
            float(np.max(np.abs(fd - hyp.mirror_gradient(x))))
            / float(np.max(np.abs(hyp.mirror_gradient(x)))),
        )
    gap = 0.0
    for _ in range(100):
        beta = float(rng.choice([1e-14, 1e-6, 1.0]))
        hyp = HypentropyMap(beta)
        t = rng.standard_normal(15)
        x = rng.standard_normal(15)
        gap = max(gap, abs(bregman(hyp, t, x).value - bregman_definitional(hyp, t, x)))
    ok = worst <= 1e-7 and gap <= 1e-10
    out.append(
        CheckResult(
            "mirror_map_calculus", ok, f"fd rel err {worst:.2e}, form gap {gap:.2e}"
        )
    )

    violations = 0
    for _ in range(200):
        sig = generate_signal(30, 4, int(rng.integers(0, 2**31)))
        hyp = HypentropyMap(float(rng.choice([1e-10, 1e-6, 1e-2])))
        if rng.random() < 0.5:
            x = rng.standard_normal(30)
        else:
            x = sig.values + 0.3 * sig.x_min * rng.uniform(-1, 1, 30) * np.abs(
                np.sign(sig.values)
            )
        rep = lemma1_bounds(hyp, sig, x)
        if not rep.lower_ok or (rep.upper_applicable and not rep.upper_ok):
            violations += 1
    out.append(
        CheckResult("bregman_norm_bounds", violations == 0, f"{violations} violations")
    )

    sig = generate_signal(20, 3, seed)
    meas = generate_measurements(sig, 100, seed)
    beta = 1e-6
    q = (0.5 * beta) ** 2
    st = initialize_factored(meas, estimate_support_coordinate(meas), beta, Algorithm.EG_PM)
    md = initialize_md(meas, estimate_support_coordinate(meas), beta)
    init_gap = float(np.max(np.abs(st.x - md.x)))
    for _ in range(500):
        st = step_egpm(st, meas, 1e-3, beta)
    drift = float(np.max(np.abs(st.u * st.v - q))) / q / np.finfo(float).eps
    ok = drift <= 64.0 and init_gap <= 1e-12
    out.append(
        CheckResult(
            "factor_product_conserved", ok, f"drift {drift:.1f} ulp, init gap {init_gap:.1e}"
        )
    )

    def fieldfn(z):
        return -np.hypot(z, beta) * empirical_gradient(z, meas)

    x0 = md.x
    h = 0.05
    ref = x0
    for _ in range(8):
        ref = rk4_step(ref, fieldfn, h / 8.0)
    two = rk4_step(rk4_step(x0, fieldfn, h / 2.0), fieldfn, h / 2.0)
    one = rk4_step(x0, fieldfn, h)
    ratio = float(
        np.linalg.norm(one - ref) / max(np.linalg.norm(two - ref), 1e-300)
    )
    out.append(
        CheckResult("rk4_step_doubling", 8.0 <= ratio <= 32.0, f"error ratio {ratio:.1f}")
    )
    return out
