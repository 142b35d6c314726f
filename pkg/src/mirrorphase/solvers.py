"""Mirror descent solvers for the sparse phase retrieval risk.

All three methods follow the hypentropy mirror flow

    dX/dt = -(hess Phi(X))^(-1) grad F(X) = -sqrt(X^2 + beta^2) . grad F(X)

from the one-hot initialization X(0) = (theta_hat / sqrt(3)) e_{i0},
theta_hat = sqrt(mean Y):

* MD_RK4 integrates the flow with classical fourth-order Runge-Kutta,
  step h = eta_eff.
* EG_PM is the exponentiated multiplicative update on the factor pair
  X = U - V with U_i V_i pinned at beta^2 / 4:
      U <- U . exp(-eta grad F(X)),  V <- V . exp(+eta grad F(X)).
  One EG step with frozen gradient integrates the flow over time eta,
  so for small eta the iterates track MD_RK4 at matching algo_time.
* HWF is plain gradient descent on the square-root factorization
  X = U.U - V.V:
      U <- U . (1 - 2 eta grad F(X)),  V <- V . (1 + 2 eta grad F(X)).
  Squaring shows one HWF step at eta matches one EG step at 4 eta up
  to O(eta^2).

Factored initialization places, at the estimated support coordinate,

    U_{i0} = theta_hat / (2 sqrt(3)) + sqrt(theta_hat^2 / 12 + beta^2 / 4),
    V_{i0} = beta^2 / 4 / U_{i0},

(the closed form for V_{i0} with -a + sqrt(a^2 + b) evaluated through
the reciprocal identity; the literal difference rounds to exactly 0.0
in float64 once beta <= ~1e-9, which would wedge a multiplicative
iterate at zero) and U_i = V_i = beta / 2 elsewhere. HWF uses the
element-wise square roots of these values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .diagnostics import record
from .geometry import HypentropyMap, dist
from .problem import (
    MeasurementSet,
    SparseSignal,
    empirical_gradient,
    estimate_signal_size,
    evaluate_risk,
)


class Algorithm(str, Enum):
    MD_RK4 = "md_rk4"
    EG_PM = "eg_pm"
    HWF = "hwf"


class StepScaleMode(str, Enum):
    RAW = "raw"
    SIGNAL_CUBED = "signal_cubed"


class SolverError(RuntimeError):
    """Base class for modeled solver failures."""


class DegenerateInstanceError(SolverError):
    """All observations are zero, so theta_hat = 0 and nothing can move."""


class StepSizeTooLargeError(SolverError):
    """An HWF factor would cross zero: |2 eta g_i| >= 1 at some i."""

    def __init__(self, message: str, coordinate: int, step: int) -> None:
        super().__init__(message)
        self.coordinate = coordinate
        self.step = step


class DivergenceError(SolverError):
    """Iterates left the representable range (overflow, NaN, underflow)."""

    def __init__(self, message: str, step: int) -> None:
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    algorithm: Algorithm
    beta: float
    eta: float
    max_steps: int
    step_scale_mode: StepScaleMode = StepScaleMode.SIGNAL_CUBED
    stop_tol: Optional[float] = None
    record_every: int = 10

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError("beta must be finite and positive")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError("eta must be finite and positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        if self.stop_tol is not None and not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive when given")


@dataclass(frozen=True)
class SolverState:
    """Iterate at one step; u and v are the factor pair when factored."""

    x: np.ndarray
    step_index: int
    algo_time: float
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def initialize_md(meas: MeasurementSet, i0: int, beta: float) -> SolverState:
    """One-hot start x = (theta_hat / sqrt(3)) e_{i0}."""
    if not 0 <= i0 < meas.n:
        raise ValueError(f"i0 must lie in [0, {meas.n})")
    if not beta > 0:
        raise ValueError("beta must be positive")
    theta = estimate_signal_size(meas)
    if theta == 0.0:
        raise DegenerateInstanceError("all observations are zero")
    x = np.zeros(meas.n)
    x[i0] = theta / math.sqrt(3.0)
    return SolverState(x=x, step_index=0, algo_time=0.0)


def initialize_factored(
    meas: MeasurementSet, i0: int, beta: float, algorithm: Algorithm
) -> SolverState:
    """Factor-pair start whose implied x equals the one-hot MD start."""
    if algorithm not in (Algorithm.EG_PM, Algorithm.HWF):
        raise ValueError("factored initialization applies to EG_PM and HWF")
    if not 0 <= i0 < meas.n:
        raise ValueError(f"i0 must lie in [0, {meas.n})")
    if not beta > 0:
        raise ValueError("beta must be positive")
    theta = estimate_signal_size(meas)
    if theta == 0.0:
        raise DegenerateInstanceError("all observations are zero")
    a = theta / (2.0 * math.sqrt(3.0))
    half = 0.5 * beta
    q = half * half
    u = np.full(meas.n, half)
    v = np.full(meas.n, half)
    u[i0] = a + math.hypot(a, half)
    v[i0] = q / u[i0]
    if algorithm is Algorithm.HWF:
        u = np.sqrt(u)
        v = np.sqrt(v)
        x = (u - v) * (u + v)
    else:
        x = u - v
    return SolverState(x=x, step_index=0, algo_time=0.0, u=u, v=v)


def rk4_step(
    x: np.ndarray,
    field: Callable[[np.ndarray], np.ndarray],
    h: float,
    k1: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One classical Runge-Kutta step for dx/dt = field(x).

    k1 may be passed in when field(x) is already known.
    """
    if k1 is None:
        k1 = field(x)
    k2 = field(x + (0.5 * h) * k1)
    k3 = field(x + (0.5 * h) * k2)
    k4 = field(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite iterate after step {step}", step=step)


def _apply_md(
    state: SolverState, grad: np.ndarray, meas: MeasurementSet, beta: float, h: float
) -> SolverState:
    def field(z: np.ndarray) -> np.ndarray:
        return -np.hypot(z, beta) * empirical_gradient(z, meas)

    k1 = -np.hypot(state.x, beta) * grad
    x = rk4_step(state.x, field, h, k1=k1)
    step = state.step_index + 1
    _check_finite(x, step)
    return SolverState(x=x, step_index=step, algo_time=step * h)


def _apply_egpm(
    state: SolverState, grad: np.ndarray, eta_eff: float, beta: float
) -> SolverState:
    a = eta_eff * grad
    peak = float(np.max(np.abs(a)))
    step = state.step_index + 1
    if not math.isfinite(peak):
        raise DivergenceError(f"non-finite gradient at step {step}", step=step)
    if peak > 700.0:
        # exp would overflow float64 (log of the max double is ~709.8)
        raise DivergenceError(
            f"|eta * grad| reached {peak:.3g} at step {step}", step=step
        )
    u = state.u * np.exp(-a)
    if np.any(u == 0.0):
        raise DivergenceError(f"factor underflow at step {step}", step=step)
    # v through the conserved product: algebraically v * exp(+a), but this
    # form keeps u_i v_i = beta^2/4 to a couple of ulp at any horizon.
    q = (0.5 * beta) ** 2
    v = q / u
    x = u - v
    _check_finite(x, step)
    return SolverState(x=x, step_index=step, algo_time=step * eta_eff, u=u, v=v)


def _apply_hwf(state: SolverState, grad: np.ndarray, eta_eff: float) -> SolverState:
    gm = (2.0 * eta_eff) * grad
    peak = float(np.max(np.abs(gm)))
    step = state.step_index + 1
    if not math.isfinite(peak):
        raise DivergenceError(f"non-finite gradient at step {step}", step=step)
    if peak >= 1.0:
        worst = int(np.argmax(np.abs(gm)))
        raise StepSizeTooLargeError(
            f"|2 eta g_i| = {peak:.3g} >= 1 at coordinate {worst}, step {step}; "
            "a factor would cross zero, reduce eta",
            coordinate=worst,
            step=step,
        )
    u = state.u * (1.0 - gm)
    v = state.v * (1.0 + gm)
    x = (u - v) * (u + v)
    _check_finite(x, step)
    return SolverState(x=x, step_index=step, algo_time=step * eta_eff, u=u, v=v)


def step_md_rk4(
    state: SolverState, meas: MeasurementSet, beta: float, h: float
) -> SolverState:
    """One RK4 step of the mirror flow."""
    return _apply_md(state, empirical_gradient(state.x, meas), meas, beta, h)


def step_egpm(
    state: SolverState, meas: MeasurementSet, eta_eff: float, beta: float
) -> SolverState:
    """One exponentiated factor update, conserving u_i v_i = beta^2/4."""
    return _apply_egpm(state, empirical_gradient(state.x, meas), eta_eff, beta)


def step_hwf(state: SolverState, meas: MeasurementSet, eta_eff: float) -> SolverState:
    """One gradient step on the square-root factorization."""
    return _apply_hwf(state, empirical_gradient(state.x, meas), eta_eff)


def run(
    meas: MeasurementSet,
    config: SolverConfig,
    i0: int,
    sink: Optional[Callable[[object], None]] = None,
    signal: Optional[SparseSignal] = None,
) -> SolverState:
    """Run one solver from the standard initialization.

    Emits a TrajectoryRecord to sink at step 0, every record_every
    steps, and at the final step. Stops after max_steps, or earlier
    when stop_tol is set, signal is given, and the sign-blind relative
    error dist(x, x*) / ||x*||_2 falls below stop_tol. Oracle fields of
    the records are NaN when signal is None. Step errors propagate.
    """
    hyp = HypentropyMap(config.beta)
    theta = estimate_signal_size(meas)
    if theta == 0.0:
        raise DegenerateInstanceError("all observations are zero")
    if config.step_scale_mode is StepScaleMode.SIGNAL_CUBED:
        eta_eff = config.eta / theta**3
    else:
        eta_eff = config.eta
    if config.algorithm is Algorithm.MD_RK4:
        state = initialize_md(meas, i0, config.beta)
    else:
        state = initialize_factored(meas, i0, config.beta, config.algorithm)
    tnorm = signal.norm if signal is not None else 0.0

    while True:
        ev = evaluate_risk(state.x, meas)
        stopped = (
            config.stop_tol is not None
            and signal is not None
            and dist(state.x, signal.values) <= config.stop_tol * tnorm
        )
        final = stopped or state.step_index >= config.max_steps
        if sink is not None and (final or state.step_index % config.record_every == 0):
            sink(record(state, signal, meas, hyp, risk=ev.value))
        if final:
            return state
        if config.algorithm is Algorithm.MD_RK4:
            state = _apply_md(state, ev.gradient, meas, config.beta, eta_eff)
        elif config.algorithm is Algorithm.EG_PM:
            state = _apply_egpm(state, ev.gradient, eta_eff, config.beta)
        else:
            state = _apply_hwf(state, ev.gradient, eta_eff)
