"""Trajectory records, stage detection, and invariant audits.

A trajectory is a list of per-step records of the quantities the
convergence theory speaks about: the sign-blind relative errors in
Euclidean and Bregman geometry, the off-support mass ||x_{S^c}||_1,
the worst on-support recovery ratio min_{i in S} |x_i| / |x*_i|, the
squared norm, and the alignment slack

    inner_ratio = 2 sqrt(3) |x . x*| - (3 ||x||^2 - ||x*||^2),

nonnegative exactly when the iterate satisfies the alignment the
warm-up analysis guarantees. Stage detection reads off the warm-up
exit T1 (first record with min_support_ratio > 1/2), the linear-stage
exit T2 (first record with rel_bregman <= 2 delta), and the fitted
contraction rate of log rel_bregman between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, TYPE_CHECKING

import numpy as np

from .geometry import HypentropyMap, dist, dist_bregman
from .problem import MeasurementSet, SparseSignal, empirical_risk

if TYPE_CHECKING:  # pragma: no cover
    from .solvers import SolverState


@dataclass(frozen=True)
class TrajectoryRecord:
    step_index: int
    algo_time: float
    risk: float
    rel_dist: float
    rel_bregman: float
    off_support_l1: float
    min_support_ratio: float
    norm_sq: float
    inner_ratio: float


@dataclass(frozen=True)
class StageReport:
    """Detected stage boundaries and summary statistics of one run.

    Optional fields are None when the stage never showed up in the
    records. linear_rate is the least-squares slope of log rel_bregman
    per step between t1 and t2 (or the last record), fitted only when
    that window holds at least 10 records with positive rel_bregman.
    warmup_drop_count counts factor >= 2 descents of rel_dist between
    consecutive plateaus before t1; purely descriptive.
    """

    t1_step: Optional[int]
    t2_step: Optional[int]
    linear_rate: Optional[float]
    warmup_drop_count: Optional[int]
    final_rel_dist: float
    max_off_support_l1: float


@dataclass(frozen=True)
class ClaimAudit:
    ok: bool
    first_violation_step: Optional[int]


@dataclass(frozen=True)
class AuditReport:
    """Per-claim outcome of the trajectory-wide theory checks."""

    off_support: ClaimAudit
    norm_window: ClaimAudit
    alignment: ClaimAudit

    @property
    def all_ok(self) -> bool:
        return self.off_support.ok and self.norm_window.ok and self.alignment.ok


def record(
    state: "SolverState",
    signal: Optional[SparseSignal],
    meas: MeasurementSet,
    map: HypentropyMap,
    risk: Optional[float] = None,
) -> TrajectoryRecord:
    """Snapshot the diagnostic quantities at one state. Pure.

    risk may be passed in when already computed alongside the gradient;
    it must equal empirical_risk(state.x, meas), which is what is used
    when omitted. Oracle fields are NaN without the true signal.
    """
    x = state.x
    if risk is None:
        risk = empirical_risk(x, meas)
    norm_sq = float(x @ x)
    if signal is None:
        nan = float("nan")
        return TrajectoryRecord(
            step_index=state.step_index,
            algo_time=state.algo_time,
            risk=risk,
            rel_dist=nan,
            rel_bregman=nan,
            off_support_l1=nan,
            min_support_ratio=nan,
            norm_sq=norm_sq,
            inner_ratio=nan,
        )
    t = signal.values
    tnorm = signal.norm
    s = signal.support
    off = np.ones(signal.n, dtype=bool)
    off[s] = False
    return TrajectoryRecord(
        step_index=state.step_index,
        algo_time=state.algo_time,
        risk=risk,
        rel_dist=dist(x, t) / tnorm,
        rel_bregman=dist_bregman(map, x, t) / tnorm,
        off_support_l1=float(np.sum(np.abs(x[off]))),
        min_support_ratio=float(np.min(np.abs(x[s]) / np.abs(t[s]))),
        norm_sq=norm_sq,
        inner_ratio=2.0 * math.sqrt(3.0) * abs(float(x @ t))
        - (3.0 * norm_sq - tnorm * tnorm),
    )


def _validate_trajectory(trajectory: Sequence[TrajectoryRecord]) -> None:
    if len(trajectory) == 0:
        raise ValueError("trajectory is empty")
    steps = [r.step_index for r in trajectory]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("record step indices must be strictly increasing")


def _plateau_levels(values: Sequence[float], min_len: int = 50) -> list[float]:
    # Greedy maximal segments whose rel_dist stays within 1% of the
    # segment head; segments of at least min_len records count as
    # plateaus, summarized by their mean level.
    levels = []
    i = 0
    while i < len(values):
        j = i + 1
        head = values[i]
        while j < len(values) and head > 0 and abs(values[j] - head) <= 0.01 * head:
            j += 1
        if j - i >= min_len:
            levels.append(float(np.mean(values[i:j])))
        i = j
    return levels


def detect_stages(trajectory: Sequence[TrajectoryRecord], delta: float) -> StageReport:
    """Locate the warm-up exit, the linear-stage exit, and the rate.

    Detections are at recording resolution: the reported step is the
    step_index of the first record past the threshold, so refining
    record_every can only move them earlier by at most one interval.
    """
    _validate_trajectory(trajectory)
    if not delta > 0:
        raise ValueError("delta must be positive")

    t1_step = None
    t1_idx = None
    for idx, r in enumerate(trajectory):
        if r.min_support_ratio > 0.5:
            t1_step, t1_idx = r.step_index, idx
            break
    # The linear stage ends after the warm-up exits: search for the
    # Bregman crossing from t1 onward (a coarse delta can otherwise be
    # satisfied earlier, while small support coordinates are still
    # growing, which would invert the stage order).
    t2_step = None
    t2_idx = None
    for idx, r in enumerate(trajectory):
        if t1_idx is not None and idx < t1_idx:
            continue
        if r.rel_bregman <= 2.0 * delta:
            t2_step, t2_idx = r.step_index, idx
            break

    linear_rate = None
    if t1_idx is not None:
        stop = t2_idx + 1 if t2_idx is not None else len(trajectory)
        window = [
            r
            for r in trajectory[t1_idx:stop]
            if math.isfinite(r.rel_bregman) and r.rel_bregman > 0
        ]
        if len(window) >= 10:
            xs = np.array([r.step_index for r in window], dtype=float)
            ys = np.log([r.rel_bregman for r in window])
            linear_rate = float(np.polyfit(xs, ys, 1)[0])

    warmup_drop_count = None
    head = trajectory[: t1_idx + 1] if t1_idx is not None else trajectory
    rel = [r.rel_dist for r in head]
    if all(math.isfinite(v) for v in rel):
        levels = _plateau_levels(rel)
        warmup_drop_count = sum(
            1 for a, b in zip(levels, levels[1:]) if b > 0 and a / b >= 2.0
        )

    return StageReport(
        t1_step=t1_step,
        t2_step=t2_step,
        linear_rate=linear_rate,
        warmup_drop_count=warmup_drop_count,
        final_rel_dist=trajectory[-1].rel_dist,
        max_off_support_l1=max(r.off_support_l1 for r in trajectory),
    )


def audit_theorem_invariants(
    trajectory: Sequence[TrajectoryRecord],
    signal: SparseSignal,
    m: int,
    delta: float,
) -> AuditReport:
    """Check the three trajectory-wide guarantees on the records.

    (a) off-support mass: ||x_{S^c}||_1 <= delta ||x*||_2 for every
        record up to the detected t2 (all records when t2 is absent);
    (b) norm window: 1/3 - 3 sqrt(log n / m) <= ||x||^2 / ||x*||^2 <= 2
        from the first record inside the window onward;
    (c) alignment: inner_ratio >= -1e-9 over the same range as (b).

    Norm and alignment are stated for a unit-norm signal; both checks
    normalize accordingly (inner_ratio scales by ||x*||^2).
    """
    _validate_trajectory(trajectory)
    tnorm = signal.norm
    t2_step = detect_stages(trajectory, delta).t2_step

    off_ok, off_at = True, None
    limit = delta * tnorm
    for r in trajectory:
        if t2_step is not None and r.step_index > t2_step:
            break
        if not r.off_support_l1 <= limit:
            off_ok, off_at = False, r.step_index
            break

    lo = 1.0 / 3.0 - 3.0 * math.sqrt(math.log(signal.n) / m)
    hi = 2.0
    s2 = tnorm * tnorm
    entered = None
    for idx, r in enumerate(trajectory):
        if lo <= r.norm_sq / s2 <= hi:
            entered = idx
            break
    norm_ok, norm_at = True, None
    align_ok, align_at = True, None
    if entered is None:
        norm_ok = False
    else:
        for r in trajectory[entered:]:
            if not lo <= r.norm_sq / s2 <= hi:
                norm_ok, norm_at = False, r.step_index
                break
        for r in trajectory[entered:]:
            if not r.inner_ratio / s2 >= -1e-9:
                align_ok, align_at = False, r.step_index
                break

    return AuditReport(
        off_support=ClaimAudit(ok=off_ok, first_violation_step=off_at),
        norm_window=ClaimAudit(ok=norm_ok, first_violation_step=norm_at),
        alignment=ClaimAudit(ok=align_ok, first_violation_step=align_at),
    )


def sign_consistency(
    snapshots: Sequence[np.ndarray], signal: SparseSignal, tol: float = 1e-12
) -> tuple[bool, int]:
    """Whether one global sign aligns every snapshot with the signal.

    The sign xi is read from the last snapshot (sign of x_end . x*) and
    applied retroactively; returns (all snapshots satisfy
    xi * x_i * x*_i >= -tol, xi). Only support coordinates bind.
    """
    if len(snapshots) == 0:
        raise ValueError("no snapshots")
    t = signal.values
    s = signal.support
    xi = 1 if float(snapshots[-1] @ t) >= 0.0 else -1
    ok = all(float(np.min(xi * x[s] * t[s])) >= -tol for x in snapshots)
    return ok, xi
