"""Sparse phase retrieval instances and the empirical risk.

A hidden k-sparse signal x* in R^n is observed through m phaseless
quadratic measurements

    Y_j = (A_j . x*)^2,      A_j ~ N(0, I_n) i.i.d.,

and recovery minimizes the empirical risk

    F(x) = (1/4m) * sum_j ((A_j . x)^2 - Y_j)^2,
    grad F(x) = (1/m) * sum_j ((A_j . x)^2 - Y_j) (A_j . x) A_j.

This module generates instances, evaluates F and its gradient, and
provides the two moment estimators solvers are seeded with: the signal
size sqrt(mean Y) and the index maximizing sum_j Y_j A_{ji}^2.

Randomness contract: every draw goes through a PCG64 generator keyed by
``SeedSequence(entropy=seed, spawn_key=(stream,))`` where ``stream`` is
one of the module-level stream tags. Signal and measurement draws live
on disjoint streams, so for a fixed seed the signal is unchanged by how
many measurements are requested (and vice versa). Risk and gradient
sums walk the measurement rows in fixed 256-row blocks accumulated in
index order, so dense and regenerated storage produce identical bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

# Stream tags for stream_rng. Fixed for reproducibility; never reorder.
SIGNAL_STREAM = 0
MEASUREMENT_STREAM = 1
AUX_STREAM = 2

# Row-block size for risk/gradient accumulation. Fixed so that the
# reduction order (and therefore the output bits) never depends on
# storage mode or worker count.
MEASUREMENT_BLOCK = 256

_SIGNAL_RESAMPLE_BUDGET = 1000


class InfeasibleSignalError(RuntimeError):
    """Rejection sampling for a signal constraint ran out of budget."""


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Generator for the given (seed, stream) pair.

    Streams are split with SeedSequence spawn keys, a stable counter
    based derivation: the same (seed, stream) always yields the same
    values, and distinct streams are statistically independent.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.PCG64(ss))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SparseSignal:
    """A k-sparse planted signal x*.

    values holds the full n-vector (zero off support), support the
    sorted indices of the k nonzero entries. Arrays are read-only.
    """

    values: np.ndarray
    support: np.ndarray
    n: int
    k: int

    def __post_init__(self) -> None:
        if self.values.shape != (self.n,):
            raise ValueError(f"values must have shape ({self.n},)")
        if self.support.shape != (self.k,) or not 1 <= self.k <= self.n:
            raise ValueError("support must hold k indices with 1 <= k <= n")
        if np.any(np.diff(self.support) <= 0):
            raise ValueError("support indices must be strictly increasing")
        if self.support[0] < 0 or self.support[-1] >= self.n:
            raise ValueError("support indices out of range")
        on = np.zeros(self.n, dtype=bool)
        on[self.support] = True
        if np.any(self.values[~on] != 0.0):
            raise ValueError("values must vanish off the support")
        if np.any(self.values[on] == 0.0):
            raise ValueError("values must be nonzero on the support")

    @classmethod
    def from_values(cls, values: np.ndarray) -> "SparseSignal":
        """Wrap an explicit vector, deriving support from its nonzeros."""
        values = _frozen(np.array(values, dtype=np.float64))
        support = _frozen(np.flatnonzero(values))
        return cls(values=values, support=support, n=values.shape[0], k=support.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @property
    def x_min(self) -> float:
        """Smallest nonzero magnitude over the signal norm."""
        return float(np.min(np.abs(self.values[self.support]))) / self.norm

    @property
    def x_max(self) -> float:
        """Largest nonzero magnitude over the signal norm."""
        return float(np.max(np.abs(self.values[self.support]))) / self.norm


def generate_signal(
    n: int,
    k: int,
    seed: int,
    min_component: Optional[float] = None,
    scale: float = 1.0,
) -> SparseSignal:
    """Draw a k-sparse signal with ||x*||_2 = scale.

    Support indices are uniform without replacement; nonzero values are
    standard normal, normalized to unit norm, then multiplied by scale.
    If min_component is given, values are redrawn (budgeted) until the
    smallest normalized magnitude min_i |x*_i| / ||x*||_2 reaches it.
    min_component * sqrt(k) == 1 is the degenerate corner where the only
    feasible vectors have all magnitudes equal to 1/sqrt(k); that case
    is drawn directly as random signs, since rejection sampling almost
    surely never terminates there.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    if min_component is not None:
        if not 0 < min_component:
            raise ValueError("min_component must be positive")
        if min_component * math.sqrt(k) > 1.0 + 1e-12:
            raise ValueError(
                "min_component * sqrt(k) > 1 is infeasible for a unit-norm vector"
            )
    rng = stream_rng(seed, SIGNAL_STREAM)
    support = np.sort(rng.choice(n, size=k, replace=False))

    if min_component is not None and min_component * math.sqrt(k) >= 1.0 - 1e-12:
        unit = (2.0 * rng.integers(0, 2, size=k) - 1.0) / math.sqrt(k)
    else:
        unit = None
        for _ in range(_SIGNAL_RESAMPLE_BUDGET):
            draw = rng.standard_normal(k)
            nrm = np.linalg.norm(draw)
            if nrm == 0.0:
                continue
            cand = draw / nrm
            if min_component is None or np.min(np.abs(cand)) >= min_component:
                unit = cand
                break
        if unit is None:
            raise InfeasibleSignalError(
                f"no draw with min component >= {min_component} in "
                f"{_SIGNAL_RESAMPLE_BUDGET} attempts (k={k})"
            )

    values = np.zeros(n)
    values[support] = scale * unit
    return SparseSignal(
        values=_frozen(values), support=_frozen(support), n=n, k=k
    )


@dataclass(frozen=True)
class MeasurementSet:
    """m Gaussian sensing rows and their squared observations.

    sensing is the (m, n) row matrix when materialized, or None when
    rows are regenerated on the fly from (seed, MEASUREMENT_STREAM);
    both storages yield identical row values. Arrays are read-only.
    """

    observations: np.ndarray
    m: int
    n: int
    seed: int
    sensing: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.observations.shape != (self.m,):
            raise ValueError(f"observations must have shape ({self.m},)")
        if self.sensing is not None and self.sensing.shape != (self.m, self.n):
            raise ValueError(f"sensing must have shape ({self.m}, {self.n})")

    def sensing_blocks(self) -> Iterator[tuple[slice, np.ndarray]]:
        """Yield (row slice, row block) pairs in index order.

        Blocks are MEASUREMENT_BLOCK rows (last one ragged). Regenerated
        mode relies on standard_normal being request-partition invariant,
        so the blocks equal the corresponding slices of a dense draw.
        """
        return _iter_blocks(self.m, self.n, self.seed, self.sensing)


def _iter_blocks(
    m: int, n: int, seed: int, sensing: Optional[np.ndarray]
) -> Iterator[tuple[slice, np.ndarray]]:
    if sensing is not None:
        for start in range(0, m, MEASUREMENT_BLOCK):
            sl = slice(start, min(start + MEASUREMENT_BLOCK, m))
            yield sl, sensing[sl]
    else:
        rng = stream_rng(seed, MEASUREMENT_STREAM)
        for start in range(0, m, MEASUREMENT_BLOCK):
            stop = min(start + MEASUREMENT_BLOCK, m)
            yield slice(start, stop), rng.standard_normal((stop - start, n))


def generate_measurements(
    signal: SparseSignal, m: int, seed: int, materialize: bool = True
) -> MeasurementSet:
    """Draw m sensing rows for the signal and square the projections.

    materialize=False skips storing the (m, n) matrix; rows are then
    regenerated from the seed on every pass (identical values, lower
    memory, roughly double the risk/gradient time). Observations are
    squared blockwise in both modes so the two storages agree bitwise.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    sensing = None
    if materialize:
        rng = stream_rng(seed, MEASUREMENT_STREAM)
        sensing = _frozen(rng.standard_normal((m, signal.n)))
    observations = np.empty(m)
    for sl, block in _iter_blocks(m, signal.n, seed, sensing):
        w = block @ signal.values
        observations[sl] = w * w
    return MeasurementSet(
        observations=_frozen(observations), m=m, n=signal.n, seed=seed, sensing=sensing
    )


@dataclass(frozen=True)
class RiskEvaluation:
    """Risk value and gradient at one point, from a single data pass."""

    value: float
    gradient: np.ndarray


def _accumulate(
    x: np.ndarray,
    meas: MeasurementSet,
    want_value: bool,
    want_gradient: bool,
    compensated: bool,
) -> tuple[float, Optional[np.ndarray]]:
    if x.shape != (meas.n,):
        raise ValueError(f"x must have shape ({meas.n},)")
    y = meas.observations
    value = 0.0
    value_terms: list[float] = []
    grad = np.zeros(meas.n) if want_gradient else None
    carry = np.zeros(meas.n) if (want_gradient and compensated) else None
    for sl, block in meas.sensing_blocks():
        w = block @ x
        r = w * w - y[sl]
        if want_value:
            if compensated:
                value_terms.extend((r * r).tolist())
            else:
                value += float(np.dot(r, r))
        if want_gradient:
            part = block.T @ (r * w)
            if compensated:
                # Neumaier update: carry holds the low-order bits lost
                # when adding each block partial.
                t = grad + part
                lost = np.where(
                    np.abs(grad) >= np.abs(part),
                    (grad - t) + part,
                    (part - t) + grad,
                )
                carry += lost
                grad = t
            else:
                grad += part
    if want_value and compensated:
        value = math.fsum(value_terms)
    if want_gradient and compensated:
        grad = grad + carry
    return value / (4.0 * meas.m), (None if grad is None else grad / meas.m)


def empirical_risk(x: np.ndarray, meas: MeasurementSet, compensated: bool = False) -> float:
    """F(x) = (1/4m) sum_j ((A_j . x)^2 - Y_j)^2."""
    value, _ = _accumulate(x, meas, True, False, compensated)
    return value


def empirical_gradient(
    x: np.ndarray, meas: MeasurementSet, compensated: bool = False
) -> np.ndarray:
    """grad F(x) = (1/m) sum_j ((A_j . x)^2 - Y_j) (A_j . x) A_j."""
    _, grad = _accumulate(x, meas, False, True, compensated)
    return grad


def evaluate_risk(
    x: np.ndarray, meas: MeasurementSet, compensated: bool = False
) -> RiskEvaluation:
    """Risk and gradient together, sharing the A @ x pass.

    Bit-identical to calling empirical_risk and empirical_gradient
    separately (same block walk, same operations).
    """
    value, grad = _accumulate(x, meas, True, True, compensated)
    return RiskEvaluation(value=value, gradient=grad)


def population_gradient(x: np.ndarray, signal: SparseSignal) -> np.ndarray:
    """Expected gradient over the measurement ensemble.

    grad f(x) = (3 ||x||^2 - ||x*||^2) x - 2 (x . x*) x*. Its zeros are
    the origin, the saddles {||x||^2 = ||x*||^2 / 3, x perp x*}, and the
    global minima +-x*.
    """
    t = signal.values
    if x.shape != t.shape:
        raise ValueError("x must match the signal dimension")
    return (3.0 * float(x @ x) - float(t @ t)) * x - 2.0 * float(x @ t) * t


def estimate_signal_size(meas: MeasurementSet) -> float:
    """theta_hat = sqrt(mean Y), a consistent estimate of ||x*||_2."""
    return float(np.sqrt(np.mean(meas.observations)))


def estimate_support_coordinate(meas: MeasurementSet) -> int:
    """Index maximizing sum_j Y_j A_{ji}^2; ties break to the lowest index."""
    scores = np.zeros(meas.n)
    y = meas.observations
    for sl, block in meas.sensing_blocks():
        scores += np.einsum("ji,j->i", block * block, y[sl])
    return int(np.argmax(scores))
