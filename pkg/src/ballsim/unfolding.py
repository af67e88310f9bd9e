"""Folding a Memory run (one ball per step) into rounds of a filling process.

At a round boundary the Memory step commits to some bin ``i``.  Judged
against the round-start state, an overloaded ``i`` makes a one-step round;
an underloaded ``i`` with deficit ``d`` makes a round of the next ``d+1``
atomic steps.  A round therefore always holds 1 or ``deficit+1`` balls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .conditions import (
    AuditSummary,
    ConditionReport,
    Mode,
    ConditionViolation,
    check_condition_p,
    check_condition_w,
    check_filling_coupling,
    effective_vector_memory,
)
from .core import LoadState, ProbabilityVector, deficit
from .potentials import good_event, min_window_density
from .processes import RoundOutcome, apply_outcome

EMPTY = -1


@dataclass
class AtomicTrace:
    """Single-ball placements of a Memory run, plus folded-round markers once folded."""

    n: int
    sampled: np.ndarray
    bins: np.ndarray
    cache_before: np.ndarray  # EMPTY before the first step
    markers: Optional[np.ndarray] = None
    partial: bool = False

    def __len__(self) -> int:
        return len(self.bins)

    @classmethod
    def from_outcomes(cls, n: int, outcomes: Sequence[RoundOutcome]) -> "AtomicTrace":
        if any(o.balls_placed != 1 for o in outcomes):
            raise ValueError("an atomic trace holds exactly one ball per step")
        return cls(
            n=n,
            sampled=np.array([o.sampled[0] for o in outcomes], dtype=np.int64),
            bins=np.array([o.chosen for o in outcomes], dtype=np.int64),
            cache_before=np.array(
                [EMPTY if o.cache_before is None else o.cache_before for o in outcomes], dtype=np.int64
            ),
        )


@dataclass
class FoldedRound:
    start: int  # index of the first atomic step
    steps: int
    outcome: RoundOutcome
    receivers: tuple[int, ...]  # receiving bin of each atomic step, in order


@dataclass
class FoldResult:
    trace: AtomicTrace
    rounds: list[FoldedRound]
    final_state: LoadState  # state after the last complete round
    partial_steps: int = 0

    @property
    def partial(self) -> bool:
        return self.partial_steps > 0


def fold_memory_trace(
    trace: AtomicTrace,
    visit: Optional[Callable[[LoadState, FoldedRound], None]] = None,
    after: Optional[Callable[[LoadState, FoldedRound], None]] = None,
) -> FoldResult:
    """Greedy folding; ``visit`` sees each round with the live round-start state.

    ``after`` sees the same live state once the round has been applied.

    A trailing round cut short by the end of the trace is reported through
    ``partial_steps`` and left out of ``rounds``.
    """
    n = trace.n
    state = LoadState(n)
    rounds: list[FoldedRound] = []
    markers: list[int] = []
    s, m = 0, len(trace)
    partial = 0
    while s < m:
        i = int(trace.bins[s])
        steps = deficit(state, i) + 1 if state.is_underloaded(i) else 1
        if s + steps > m:
            partial = m - s
            break
        receivers = tuple(int(b) for b in trace.bins[s : s + steps])
        deltas: dict[int, int] = {}
        for b in receivers:
            deltas[b] = deltas.get(b, 0) + 1
        cache = int(trace.cache_before[s])
        out = RoundOutcome(
            sampled=(int(trace.sampled[s]),),
            chosen=i,
            deltas=deltas,
            balls_placed=steps,
            samples_used=steps,
            cache_before=None if cache == EMPTY else cache,
            cache_after=None,
        )
        folded = FoldedRound(s, steps, out, receivers)
        if visit is not None:
            visit(state, folded)
        apply_outcome(state, out)
        if after is not None:
            after(state, folded)
        rounds.append(folded)
        markers.append(s)
        s += steps
    trace.markers = np.asarray(markers, dtype=np.int64)
    trace.partial = partial > 0
    return FoldResult(trace, rounds, state, partial)


@dataclass
class FoldAudit:
    w: AuditSummary = field(default_factory=AuditSummary)
    coupling_violations: int = 0
    rounds: int = 0
    partial_steps: int = 0
    good_flags: list[bool] = field(default_factory=list)

    def min_density(self, n: int) -> Optional[int]:
        return min_window_density(self.good_flags, n, first_round=1)

    def as_dict(self) -> dict:
        return {
            **self.w.as_dict(),
            "coupling_violations": self.coupling_violations,
            "folded_rounds": self.rounds,
            "partial_steps": self.partial_steps,
        }


def audit_memory_folding(trace: AtomicTrace, mode: Mode = Mode.AUDIT, track_good_event: bool = True) -> FoldAudit:
    """Fold ``trace`` and check P (exact effective vectors) and W on every round.

    Also records the weaker coupling property and, if asked, the good event
    after every folded round.
    """
    mode = Mode(mode)
    audit = FoldAudit()
    n = trace.n

    def visit(state: LoadState, folded: FoldedRound) -> None:
        out = folded.outcome
        cache = out.cache_before
        vec = ProbabilityVector.uniform(n) if cache is None else effective_vector_memory(state, cache)
        report = ConditionReport(len(audit.good_flags))
        report.p_violation = check_condition_p(vec, n, np.sort(state.loads)[::-1])
        report.w_violation = check_condition_w(state, out)
        audit.w.add(report, True)
        if check_filling_coupling(state, out.chosen, folded.receivers) is not None:
            audit.coupling_violations += 1
        if mode is Mode.STRICT and not report.passed:
            raise ConditionViolation(report)

    def track(state: LoadState, folded: FoldedRound) -> None:
        audit.good_flags.append(good_event(state))

    result = fold_memory_trace(trace, visit, track if track_good_event else None)
    audit.rounds = len(result.rounds)
    audit.partial_steps = result.partial_steps
    return audit


def bad_allocation_count(trace: AtomicTrace, threshold) -> int:
    """Atomic steps ``s`` (1-based) whose gap after the step is at least ``threshold``."""
    n = trace.n
    thr = Fraction(threshold)
    if thr <= 0:
        return len(trace)
    # running max of the receiving bins' loads after each step
    counts = np.zeros(n, dtype=np.int64)
    after = np.empty(len(trace), dtype=np.int64)
    for s, b in enumerate(trace.bins.tolist()):
        counts[b] += 1
        after[s] = counts[b]
    running_max = np.maximum.accumulate(after)
    steps = np.arange(1, len(trace) + 1, dtype=np.int64)
    # gap >= thr  <=>  n*max - s >= ceil(thr*n), the left side being an integer
    need = -((-thr.numerator * n) // thr.denominator)
    if need > n * len(trace):
        return 0
    return int(np.count_nonzero(n * running_max - steps >= need))
