"""Runtime verifiers for the two framework conditions.

Condition P: the per-round sampling distribution over sorted load ranks is
majorized by the uniform one (every prefix sum ``<= k/n``).

Condition W: an overloaded sample gets exactly one ball; an underloaded
sample ``i`` triggers exactly ``deficit(i)+1`` balls into bins that were
underloaded at round start, with at most one receiver ending at
``ceil(W/n)+1``, at most one at ``ceil(W/n)``, and the rest at or below
``ceil(W/n)-1``.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import LoadState, ProbabilityVector, ceil_div, deficit, rank_positions
from .processes import Hook, Process, RoundOutcome


class Mode(str, enum.Enum):
    STRICT = "strict"
    AUDIT = "audit"


class ConditionViolation(AssertionError):
    def __init__(self, report: "ConditionReport") -> None:
        super().__init__(report.describe())
        self.report = report


@dataclass(frozen=True)
class PViolation:
    k: int  # 1-based prefix length
    prefix: float
    bound: float


@dataclass(frozen=True)
class WViolation:
    rule: str
    bin: Optional[int]
    delta: Optional[int]


@dataclass
class ConditionReport:
    round: int
    p_violation: Optional[PViolation] = None
    w_violation: Optional[WViolation] = None

    @property
    def passed(self) -> bool:
        return self.p_violation is None and self.w_violation is None

    def describe(self) -> str:
        parts = [f"round {self.round}"]
        if self.p_violation:
            v = self.p_violation
            parts.append(f"P violated at k={v.k}: prefix {v.prefix:.6g} > {v.bound:.6g}")
        if self.w_violation:
            v = self.w_violation
            parts.append(f"W rule {v.rule} violated (bin {v.bin}, delta {v.delta})")
        return "; ".join(parts) if len(parts) > 1 else parts[0] + ": ok"


# --- condition P -------------------------------------------------------------

def _first_prefix_violation(vec: ProbabilityVector, n: int, order=None) -> Optional[PViolation]:
    if vec.exact:
        num = vec.numerators if order is None else vec.numerators[order]
        prefix = np.cumsum(num)
        ks = np.arange(1, n + 1, dtype=np.int64)
        # prefix/den <= k/n  <=>  prefix*n <= k*den
        bad = np.nonzero(prefix * n > ks * vec.denominator)[0]
        if bad.size:
            k = int(bad[0])
            return PViolation(k + 1, float(prefix[k]) / vec.denominator, (k + 1) / n)
        return None
    probs = vec.probs if order is None else vec.probs[order]
    prefix = np.cumsum(probs)
    bounds = np.arange(1, n + 1) / n
    bad = np.nonzero(prefix > bounds + ProbabilityVector.TOL)[0]
    if bad.size:
        k = int(bad[0])
        return PViolation(k + 1, float(prefix[k]), float(bounds[k]))
    return None


def check_condition_p(
    vec: ProbabilityVector, n: int, tie_groups: Optional[Sequence[int]] = None
) -> Optional[PViolation]:
    """First violating prefix of ``vec`` (indexed by rank), or None.

    ``tie_groups[r]`` labels rank ``r`` with its load; ranks with equal
    labels may be relabelled freely, so before reporting a violation the
    check is retried with the least mass first inside every tie class.
    """
    if len(vec) != n:
        raise ValueError(f"vector length {len(vec)} != n={n}")
    found = _first_prefix_violation(vec, n)
    if found is None or tie_groups is None:
        return found
    groups = np.asarray(tie_groups)
    mass = vec.numerators if vec.exact else vec.probs
    # groups are non-increasing along ranks; lightest mass first within each
    order = np.lexsort((mass, -groups))
    return _first_prefix_violation(vec, n, order)


def is_majorized_by_uniform(vec: ProbabilityVector, n: int) -> bool:
    return check_condition_p(vec, n) is None


def two_choice_vector(n: int) -> ProbabilityVector:
    """Rank distribution of TwoChoice without ties: ``p_i = (2i-1)/n^2``."""
    return ProbabilityVector(2 * np.arange(1, n + 1) - 1, denominator=n * n)


def effective_vector_memory(state: LoadState, cache: int) -> ProbabilityVector:
    """Exact distribution of the bin Memory commits to, re-indexed by rank.

    Each of the ``n`` equally likely samples ``u`` commits to ``u`` when
    ``x_u <= x_cache`` and to the cache otherwise.
    """
    n = state.n
    loads = state.loads
    committed = np.where(loads <= loads[cache], np.arange(n), cache)
    counts = np.bincount(committed, minlength=n)
    ranked = np.empty(n, dtype=np.int64)
    ranked[rank_positions(state)] = counts
    return ProbabilityVector(ranked, denominator=n)


def ranked_loads(state: LoadState) -> np.ndarray:
    return np.sort(state.loads)[::-1]


# --- condition W -------------------------------------------------------------

def check_condition_w(state_before: LoadState, outcome: RoundOutcome) -> Optional[WViolation]:
    """First broken rule of condition W for ``outcome`` applied to ``state_before``."""
    if sum(outcome.deltas.values()) != outcome.balls_placed:
        raise ValueError("outcome deltas do not sum to balls_placed")
    n, W = state_before.n, state_before.W
    loads = state_before.loads
    i = outcome.chosen
    if not state_before.is_underloaded(i):
        if outcome.deltas != {i: 1}:
            b = next((b for b in outcome.deltas if b != i), i)
            return WViolation("single", b, outcome.deltas.get(b))
        return None
    d = deficit(state_before, i)
    if outcome.balls_placed != d + 1:
        return WViolation("count", i, outcome.balls_placed)
    top = ceil_div(W, n)
    at_top = at_avg = 0
    for b, k in sorted(outcome.deltas.items()):
        x = int(loads[b])
        if n * x >= W:
            return WViolation("underloaded_receivers", b, k)
        end = x + k
        if end > top + 1:
            return WViolation("a", b, k)
        if end == top + 1:
            at_top += 1
            if at_top > 1:
                return WViolation("a", b, k)
        elif end == top:
            at_avg += 1
            if at_avg > 1:
                return WViolation("b", b, k)
    return None


def check_filling_coupling(state_before: LoadState, chosen: int, receivers: Sequence[int]) -> Optional[WViolation]:
    """Weaker per-round property that the Memory unfolding coupling guarantees.

    ``receivers`` lists the bins of the round's atomic allocations in order.
    The round holds one ball (overloaded ``chosen``) or ``deficit+1`` balls
    whose first ``deficit`` go to bins underloaded at round start and whose
    last goes to a bin with normalized load below 1 at round start.
    """
    n, W = state_before.n, state_before.W
    loads = state_before.loads
    if not state_before.is_underloaded(chosen):
        if list(receivers) != [chosen]:
            return WViolation("single", chosen, len(receivers))
        return None
    d = deficit(state_before, chosen)
    if len(receivers) != d + 1:
        return WViolation("count", chosen, len(receivers))
    for b in receivers[:-1]:
        if n * int(loads[b]) >= W:
            return WViolation("coupling_underloaded", b, 1)
    last = receivers[-1]
    if n * int(loads[last]) - W >= n:
        return WViolation("coupling_last", last, 1)
    return None


# --- trace auditing ------------------------------------------------------------

@dataclass
class AuditSummary:
    rounds: int = 0
    p_checked: int = 0
    p_violations: int = 0
    w_violations: int = 0
    w_rules: Counter = field(default_factory=Counter)
    first_failure: Optional[ConditionReport] = None

    @property
    def passed(self) -> bool:
        return self.p_violations == 0 and self.w_violations == 0

    def add(self, report: ConditionReport, p_checked: bool) -> None:
        self.rounds += 1
        self.p_checked += int(p_checked)
        if report.p_violation:
            self.p_violations += 1
        if report.w_violation:
            self.w_violations += 1
            self.w_rules[report.w_violation.rule] += 1
        if not report.passed and self.first_failure is None:
            self.first_failure = report

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "p_checked": self.p_checked,
            "p_violations": self.p_violations,
            "w_violations": self.w_violations,
            "w_rules": dict(sorted(self.w_rules.items())),
        }


def check_round(
    state_before: LoadState,
    outcome: RoundOutcome,
    vector: Optional[ProbabilityVector],
    round_index: int,
) -> ConditionReport:
    report = ConditionReport(round_index)
    if vector is not None:
        ties = np.sort(state_before.loads)[::-1]
        report.p_violation = check_condition_p(vector, state_before.n, ties)
    report.w_violation = check_condition_w(state_before, outcome)
    return report


def audit_trace(
    rounds: Iterable[tuple[LoadState, RoundOutcome, Optional[ProbabilityVector]]],
    mode: Mode = Mode.AUDIT,
) -> AuditSummary:
    """Check every ``(state_before, outcome, effective_vector)`` triple.

    STRICT raises :class:`ConditionViolation` at the first failing round.
    """
    mode = Mode(mode)
    summary = AuditSummary()
    for r, (state, outcome, vec) in enumerate(rounds):
        report = check_round(state, outcome, vec, r)
        summary.add(report, vec is not None)
        if mode is Mode.STRICT and not report.passed:
            raise ConditionViolation(report)
    return summary


class ConditionVerifier(Hook):
    """Checks P and W on every round of a :func:`ballsim.processes.run`."""

    def __init__(self, mode: Mode = Mode.STRICT, check_p: bool = True) -> None:
        self.mode = Mode(mode)
        self.check_p = check_p
        self.summary = AuditSummary()
        self._uniform_ok: dict[int, bool] = {}

    def before(self, state: LoadState, outcome: RoundOutcome, process: Process) -> None:
        vec = process.effective_vector(state) if self.check_p else None
        report = ConditionReport(state.t)
        if vec is not None:
            if _is_uniform(vec):
                # uniform passes every prefix with equality; check once per n
                n = state.n
                if n not in self._uniform_ok:
                    self._uniform_ok[n] = check_condition_p(vec, n) is None
                if not self._uniform_ok[n]:
                    report.p_violation = check_condition_p(vec, n)
            else:
                ties = np.sort(state.loads)[::-1]
                report.p_violation = check_condition_p(vec, state.n, ties)
        report.w_violation = check_condition_w(state, outcome)
        self.summary.add(report, vec is not None)
        if self.mode is Mode.STRICT and not report.passed:
            raise ConditionViolation(report)


def _is_uniform(vec: ProbabilityVector) -> bool:
    return vec.exact and vec.denominator == len(vec) and bool((vec.numerators == 1).all())
