"""Exact one-step oracles, throughput/efficiency series and experiment runners."""
from __future__ import annotations

import math
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np
from scipy.special import logsumexp

from .core import LoadState, ProbabilityVector, deficit, sorted_ranks
from .fast import FastRun, simulate
from .potentials import PHI_THRESHOLD, log_phi_from_loads
from .processes import Kind, ProcessConfig, Trace, packing_allocation, tight_packing_allocation

T = TypeVar("T")

THREADS_ENV = "BALLSIM_THREADS"


def worker_count(requested: Optional[int] = None) -> int:
    """``requested`` if given, else ``$BALLSIM_THREADS``, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def map_reps(fn: Callable[[int], T], reps: int, workers: Optional[int] = None) -> list[T]:
    """``[fn(0), ..., fn(reps-1)]``; results do not depend on the worker count."""
    workers = worker_count(workers)
    if workers == 1 or reps == 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(reps)))


# --- exact one-step oracles --------------------------------------------------

def expected_balls_one_step(state: LoadState, vec: ProbabilityVector) -> Fraction:
    """``1 + sum_i deficit_i * p_i`` over underloaded ranks, as an exact rational.

    ``vec`` is indexed by rank (heaviest first, ties by ascending index).
    """
    n = state.n
    if len(vec) != n:
        raise ValueError(f"vector length {len(vec)} != n={n}")
    total = Fraction(0)
    for r, i in enumerate(sorted_ranks(state)):
        if state.is_underloaded(i):
            total += deficit(state, i) * vec.fraction(r)
    return 1 + total


_RATIO_KINDS = (Kind.PACKING, Kind.TIGHT_PACKING, Kind.ONE_CHOICE)


def _branch_deltas(state: LoadState, i: int, kind: Kind) -> dict[int, int]:
    if kind is Kind.PACKING:
        return packing_allocation(state, i)
    if kind is Kind.TIGHT_PACKING:
        return tight_packing_allocation(state, i)
    return {i: 1}


def expected_phi_ratio_one_step(
    state: LoadState,
    alpha: float,
    process: Kind = Kind.PACKING,
    threshold: int = PHI_THRESHOLD,
) -> float:
    """``ln(E[Phi^{t+1}] / Phi^t)`` under uniform sampling, enumerated exactly.

    Bins with the same load lead to the same next configuration up to
    relabelling, so one branch per load level is evaluated, weighted by
    the level's share of bins.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    kind = Kind(process)
    if kind not in _RATIO_KINDS:
        raise ValueError(f"one-step ratio is defined for {', '.join(k.value for k in _RATIO_KINDS)}")
    n = state.n
    log_now = log_phi_from_loads(state.loads, state.W, alpha, threshold)
    if log_now == -math.inf:
        raise ValueError(f"no bin has normalized load >= {threshold}")
    logs, weights = [], []
    for level, members in state.levels.items():
        rep = min(members)
        deltas = _branch_deltas(state, rep, kind)
        loads = state.loads.copy()
        for b, k in deltas.items():
            loads[b] += k
        logs.append(log_phi_from_loads(loads, state.W + sum(deltas.values()), alpha, threshold))
        weights.append(len(members) / n)
    return float(logsumexp(np.array(logs), b=np.array(weights))) - log_now


# --- sqrt(n) counterexample configuration ------------------------------------

def counterexample_state(n: int) -> LoadState:
    """Normalized loads ``(sqrt n, 0 x (n - sqrt n - 1), -1 x sqrt n)`` with ``W/n = 1``."""
    r = math.isqrt(n)
    if r * r != n or n < 4:
        raise ValueError("n must be a perfect square >= 4")
    loads = np.ones(n, dtype=np.int64)
    loads[0] = r + 1
    loads[n - r :] = 0
    return LoadState.from_loads(loads)


@dataclass(frozen=True)
class CounterexampleResult:
    n: int
    alpha: float
    threshold: int
    log_ratio: float
    bound: float  # 1 + 0.1 alpha^2 / n

    @property
    def ratio(self) -> float:
        return math.exp(self.log_ratio)

    @property
    def passed(self) -> bool:
        return self.log_ratio >= math.log1p(0.1 * self.alpha**2 / self.n)


def counterexample_check(n: int, alpha: float, threshold: int = PHI_THRESHOLD) -> CounterexampleResult:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    state = counterexample_state(n)
    lr = expected_phi_ratio_one_step(state, alpha, Kind.PACKING, threshold)
    return CounterexampleResult(n, alpha, threshold, lr, 1 + 0.1 * alpha**2 / n)


# --- throughput and sample efficiency ------------------------------------------

Counters = Iterable[tuple[int, int, int]]


def _counters(source) -> list[tuple[int, int, int]]:
    if isinstance(source, Trace):
        return list(source.counters)
    if isinstance(source, FastRun):
        return [(c.t, c.W, c.S) for c in source.checkpoints]
    return [tuple(c) for c in source]


def throughput_series(source) -> list[tuple[int, Fraction]]:
    """``(t, W^t / t)`` for every recorded counter."""
    out = []
    for t, W, _S in _counters(source):
        if t < 1:
            raise ValueError("throughput needs t >= 1")
        out.append((t, Fraction(W, t)))
    return out


def sample_efficiency_series(source) -> list[tuple[int, Fraction]]:
    """``(t, W^t / S^t)`` for every recorded counter."""
    out = []
    for t, W, S in _counters(source):
        if S < 1:
            raise ValueError("sample efficiency needs S >= 1")
        out.append((t, Fraction(W, S)))
    return out


# --- experiments -------------------------------------------------------------

def gap_key(gap: Fraction) -> int:
    """Histogram bucket of a gap: ``ceil(gap)``, i.e. max load minus ``floor(W/n)``."""
    return math.ceil(gap)


@dataclass
class GapHistogram:
    counts: Counter = field(default_factory=Counter)

    @classmethod
    def from_gaps(cls, gaps: Iterable[Fraction]) -> "GapHistogram":
        return cls(Counter(gap_key(g) for g in gaps))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def mode(self) -> int:
        """Most frequent bucket; the smallest one on ties."""
        top = max(self.counts.values())
        return min(k for k, c in self.counts.items() if c == top)

    def share(self, key: int) -> float:
        return self.counts.get(key, 0) / self.total

    def keys(self) -> list[int]:
        return sorted(self.counts)

    def rows(self) -> list[tuple[int, int, float]]:
        return [(k, self.counts[k], self.share(k)) for k in self.keys()]


@dataclass
class ExperimentResult:
    config: ProcessConfig
    n: int
    m: int
    reps: int
    gaps: list[Fraction]
    histogram: GapHistogram
    seeds: list[tuple[int, int]]  # (seed, rep)
    series: dict[str, list] = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def summary(self) -> dict:
        g = self.gaps
        return {
            "mean": float(sum(g, Fraction(0)) / len(g)),
            "median": float(np.median([float(x) for x in g])),
            "mode": self.histogram.mode,
            "min": float(min(g)),
            "max": float(max(g)),
        }


def run_reps(
    config: ProcessConfig,
    n: int,
    m: int,
    reps: int,
    checkpoints: Sequence[int] = (),
    alpha: Optional[float] = None,
    workers: Optional[int] = None,
) -> list[FastRun]:
    if reps < 1:
        raise ValueError("reps must be >= 1")
    return map_reps(lambda r: simulate(config, n, m, rep=r, checkpoints=checkpoints, alpha=alpha), reps, workers)


def gap_distribution_experiment(
    config: ProcessConfig,
    n: int,
    m: int,
    reps: int,
    workers: Optional[int] = None,
    stride: Optional[int] = None,
    alpha: Optional[float] = None,
) -> ExperimentResult:
    """Final gap of ``reps`` seeded repetitions; series are averaged over reps at ``stride``."""
    start = time.perf_counter()
    marks = list(range(stride, m + 1, stride)) if stride else []
    runs = run_reps(config, n, m, reps, marks, alpha, workers)
    gaps = [Fraction(r.gap_num, n) for r in runs]
    series: dict[str, list] = {}
    if marks:
        series = {"t": marks, "mu": [], "eta": [], "delta": [], "log_phi": []}
        for k in range(len(marks)):
            cps = [r.checkpoints[k] for r in runs]
            series["mu"].append(float(np.mean([c.W / c.t for c in cps])))
            series["eta"].append(float(np.mean([c.W / c.S for c in cps])))
            series["delta"].append(float(np.mean([c.delta_num / n for c in cps])))
            if alpha is not None:
                series["log_phi"].append(float(np.mean([c.log_phi for c in cps])))
    return ExperimentResult(
        config=config,
        n=n,
        m=m,
        reps=reps,
        gaps=gaps,
        histogram=GapHistogram.from_gaps(gaps),
        seeds=[(config.seed, r) for r in range(reps)],
        series=series,
        wall_clock=time.perf_counter() - start,
    )


def median_gap(config: ProcessConfig, n: int, m: int, reps: int, workers: Optional[int] = None) -> float:
    runs = run_reps(config, n, m, reps, workers=workers)
    return float(np.median([r.gap_num / n for r in runs]))


def lower_bound_threshold(n: int) -> float:
    """``(1/2) log n / log log n`` (natural logarithms)."""
    return 0.5 * math.log(n) / math.log(math.log(n))


@dataclass(frozen=True)
class LowerBoundResult:
    threshold: float
    gaps: tuple[Fraction, ...]

    @property
    def fraction(self) -> float:
        thr = Fraction(self.threshold)
        return sum(g >= thr for g in self.gaps) / len(self.gaps)


def lower_bound_experiment(
    config: ProcessConfig, n: int, m: int, reps: int, threshold: float, workers: Optional[int] = None
) -> LowerBoundResult:
    """Share of repetitions whose final gap is at least ``threshold`` (compared exactly)."""
    runs = run_reps(config, n, m, reps, workers=workers)
    return LowerBoundResult(threshold, tuple(Fraction(r.gap_num, n) for r in runs))


@dataclass(frozen=True)
class GrowthFit:
    ns: tuple[int, ...]
    medians: tuple[float, ...]
    slope: float  # median gap per unit of ln n
    intercept: float


def heavy_gap_growth(
    config: ProcessConfig, ns: Sequence[int], reps: int, kappa: float = 10, workers: Optional[int] = None
) -> GrowthFit:
    """Median gap at ``m = kappa n ln n`` regressed on ``ln n``."""
    meds = [median_gap(config, n, max(1, round(kappa * n * math.log(n))), reps, workers) for n in ns]
    slope, intercept = np.polyfit([math.log(n) for n in ns], meds, 1)
    return GrowthFit(tuple(ns), tuple(meds), float(slope), float(intercept))


def geometric_checkpoints(first: int, last: int, ratio: int = 2) -> list[int]:
    """``first, first*ratio, ...`` up to and including ``last``."""
    if first < 1 or last < first or ratio < 2:
        raise ValueError("need 1 <= first <= last and ratio >= 2")
    out = []
    c = first
    while c < last:
        out.append(c)
        c *= ratio
    out.append(last)
    return out


@dataclass(frozen=True)
class BoundednessResult:
    checkpoints: tuple[int, ...]
    mean_delta_over_n: tuple[float, ...]
    max_log_phi_over_n: tuple[float, ...]

    def spread(self, values: Sequence[float]) -> float:
        """Relative difference between the last and first checkpoint."""
        return abs(values[-1] - values[0]) / abs(values[0])


def delta_boundedness_experiment(
    config: ProcessConfig,
    n: int,
    m_checkpoints: Sequence[int],
    reps: int,
    alpha: float = 0.5,
    workers: Optional[int] = None,
) -> BoundednessResult:
    """Mean ``Delta/n`` and the largest ``ln Phi / n`` over reps at each checkpoint."""
    marks = sorted(m_checkpoints)
    runs = run_reps(config, n, marks[-1], reps, marks, alpha, workers)
    deltas, phis = [], []
    for k in range(len(marks)):
        cps = [r.checkpoints[k] for r in runs]
        deltas.append(float(np.mean([c.delta_num for c in cps])) / n / n)
        phis.append(max(c.log_phi for c in cps) / n)
    return BoundednessResult(tuple(marks), tuple(deltas), tuple(phis))
