"""Potential functions and the good event, computed exactly where it matters.

``Delta`` and the good event use integer arithmetic on ``n*x_i - W``.  The
exponential potential is only ever exposed as its natural log, so
configurations with normalized loads in the hundreds stay finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import LoadState, gap
from .processes import Hook, Process, RoundOutcome

PHI_THRESHOLD = 2


def delta_numerator(state: LoadState) -> int:
    """``n * Delta`` as an integer, summed over the load levels."""
    n, W = state.n, state.W
    return sum(len(bins) * abs(n * x - W) for x, bins in state.levels.items())


def compute_delta(state: LoadState) -> Fraction:
    return Fraction(delta_numerator(state), state.n)


def log_phi_from_loads(loads: np.ndarray, W: int, alpha: float, threshold: int = PHI_THRESHOLD) -> float:
    n = len(loads)
    num = n * loads.astype(np.int64) - W
    mask = num >= threshold * n
    if not mask.any():
        return -math.inf
    return float(logsumexp(alpha * (num[mask] / n)))


def compute_log_phi(state: LoadState, alpha: float, threshold: int = PHI_THRESHOLD) -> float:
    """``ln sum_{i: y_i >= threshold} exp(alpha*y_i)``; ``-inf`` for an empty index set."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return log_phi_from_loads(state.loads, state.W, alpha, threshold)


def good_event(state: LoadState) -> bool:
    """``|B_-| >= n/20`` or ``Delta >= n/10``."""
    n = state.n
    if 20 * state.underloaded_count() >= n:
        return True
    return 10 * delta_numerator(state) >= n * n


@dataclass(frozen=True)
class PotentialSnapshot:
    t: int
    gap: Fraction
    delta: Fraction
    log_phi: float
    alpha: float
    underloaded_count: int
    good_event: bool

    def as_row(self) -> dict:
        return {
            "t": self.t,
            "gap": float(self.gap),
            "delta": float(self.delta),
            "log_phi": self.log_phi,
            "alpha": self.alpha,
            "underloaded": self.underloaded_count,
            "good_event": int(self.good_event),
        }


def snapshot(state: LoadState, alpha: float) -> PotentialSnapshot:
    n = state.n
    dnum = delta_numerator(state)
    under = state.underloaded_count()
    return PotentialSnapshot(
        t=state.t,
        gap=gap(state),
        delta=Fraction(dnum, n),
        log_phi=compute_log_phi(state, alpha),
        alpha=alpha,
        underloaded_count=under,
        good_event=20 * under >= n or 10 * dnum >= n * n,
    )


def good_event_density(flags: Sequence[bool], t0: int, n: int, first_round: int = 0) -> int:
    """Rounds ``r`` in ``[t0, t0+n]`` with the good event, given per-round flags.

    ``flags[k]`` is the event after round ``first_round + k``.
    """
    lo, hi = t0 - first_round, t0 + n - first_round
    if lo < 0 or hi >= len(flags):
        raise ValueError(f"window [{t0}, {t0 + n}] exceeds the recorded rounds")
    return int(sum(bool(f) for f in flags[lo : hi + 1]))


def min_window_density(flags: Sequence[bool], n: int, first_round: int = 0, start: int = 1) -> Optional[int]:
    """Minimum good-event count over every window ``[t0, t0+n]`` with ``t0 >= start``.

    Returns None when the trace is shorter than one window.
    """
    arr = np.asarray(flags, dtype=np.int64)
    lo = start - first_round
    if lo < 0 or len(arr) - lo < n + 1:
        return None
    csum = np.concatenate([[0], np.cumsum(arr[lo:])])
    windows = csum[n + 1 :] - csum[: -(n + 1)]
    return int(windows.min())


def window_densities(flags: Sequence[bool], n: int, first_round: int = 0, start: int = 1) -> np.ndarray:
    arr = np.asarray(flags, dtype=np.int64)
    lo = start - first_round
    if lo < 0 or len(arr) - lo < n + 1:
        return np.empty(0, dtype=np.int64)
    csum = np.concatenate([[0], np.cumsum(arr[lo:])])
    return csum[n + 1 :] - csum[: -(n + 1)]


class GoodEventTracker(Hook):
    """Records the good event after every round (``flags[k]`` is round ``k+1``)."""

    def __init__(self) -> None:
        self.flags: list[bool] = []

    def after(self, state: LoadState, outcome: RoundOutcome, process: Process) -> None:
        self.flags.append(good_event(state))

    def min_density(self, n: int) -> Optional[int]:
        return min_window_density(self.flags, n, first_round=1)


class PotentialRecorder(Hook):
    """Snapshots every ``stride`` rounds, and every round inside ``windows``."""

    def __init__(self, alpha: float, stride: int, windows: Sequence[tuple[int, int]] = ()) -> None:
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = alpha
        self.stride = stride
        self.windows = list(windows)
        self.snapshots: list[PotentialSnapshot] = []

    def after(self, state: LoadState, outcome: RoundOutcome, process: Process) -> None:
        t = state.t
        if t % self.stride == 0 or any(a <= t <= b for a, b in self.windows):
            self.snapshots.append(snapshot(state, self.alpha))
