"""Exact load configuration for balls-into-bins processes.

Bins are 0-indexed.  Every over/underloaded decision compares ``n * x_i``
with ``W`` in integer arithmetic, so nothing at a decision point depends on
floating-point rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class NormalizedLoad:
    """``y_i = numerator / denominator`` with ``numerator = n*x_i - W``."""

    numerator: int
    denominator: int

    @property
    def value(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    @property
    def underloaded(self) -> bool:
        return self.numerator < 0

    @property
    def overloaded(self) -> bool:
        return self.numerator >= 0

    def __float__(self) -> float:
        return self.numerator / self.denominator


@dataclass
class LoadState:
    """Integer loads plus the round/ball/sample counters of one run.

    ``levels`` maps a load value to the set of bins currently holding it and
    is kept in sync by :meth:`add`; rank and threshold queries walk the
    levels instead of sorting all bins.
    """

    n: int
    loads: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    W: int = 0
    t: int = 0
    S: int = 0
    levels: dict[int, set[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"need at least one bin, got n={self.n}")
        if self.loads is None:
            self.loads = np.zeros(self.n, dtype=np.int64)
        else:
            self.loads = np.asarray(self.loads, dtype=np.int64).copy()
            if self.loads.shape != (self.n,):
                raise ValueError("loads must have length n")
            if (self.loads < 0).any():
                raise ValueError("loads must be non-negative")
        self.W = int(self.loads.sum())
        self.levels = {}
        for i, x in enumerate(self.loads.tolist()):
            self.levels.setdefault(x, set()).add(i)

    @classmethod
    def from_loads(cls, loads: Sequence[int], t: int = 0, S: int = 0) -> "LoadState":
        return cls(n=len(loads), loads=np.asarray(loads), t=t, S=S)

    def copy(self) -> "LoadState":
        return LoadState(n=self.n, loads=self.loads, t=self.t, S=self.S)

    def load(self, i: int) -> int:
        return int(self.loads[i])

    def add(self, i: int, k: int) -> None:
        """Place ``k >= 1`` balls into bin ``i`` (does not touch ``t``/``S``)."""
        if k < 1:
            raise ValueError("an allocation adds at least one ball")
        old = int(self.loads[i])
        bucket = self.levels[old]
        bucket.discard(i)
        if not bucket:
            del self.levels[old]
        self.loads[i] = old + k
        self.levels.setdefault(old + k, set()).add(i)
        self.W += k

    def is_underloaded(self, i: int) -> bool:
        return self.n * int(self.loads[i]) < self.W

    def levels_desc(self) -> list[int]:
        return sorted(self.levels, reverse=True)

    def bins_by_rank(self) -> Iterator[int]:
        """Bins in non-increasing load order, ties by ascending index."""
        for level in self.levels_desc():
            yield from sorted(self.levels[level])

    def underloaded_count(self) -> int:
        return sum(len(b) for x, b in self.levels.items() if self.n * x < self.W)

    def check(self) -> None:
        """Debug invariant check; raises AssertionError on corruption."""
        assert int(self.loads.sum()) == self.W, "W out of sync with loads"
        assert (self.loads >= 0).all()
        assert sum(len(b) for b in self.levels.values()) == self.n
        for x, bins in self.levels.items():
            assert all(int(self.loads[i]) == x for i in bins)


def _check_index(state: LoadState, i: int) -> None:
    if not 0 <= i < state.n:
        raise IndexError(f"bin {i} out of range for n={state.n}")


def normalized_load(state: LoadState, i: int) -> NormalizedLoad:
    _check_index(state, i)
    return NormalizedLoad(state.n * int(state.loads[i]) - state.W, state.n)


def deficit(state: LoadState, i: int) -> int:
    """``ceil(-y_i)`` for an underloaded bin: balls needed to reach ``ceil(W/n)``."""
    _check_index(state, i)
    gap_num = state.W - state.n * int(state.loads[i])
    if gap_num <= 0:
        raise ValueError(f"bin {i} is not underloaded")
    return ceil_div(gap_num, state.n)


def gap(state: LoadState) -> Fraction:
    return Fraction(state.n * int(state.loads.max()) - state.W, state.n)


def sorted_ranks(state: LoadState) -> list[int]:
    """Permutation of bins by non-increasing load; ties by ascending index."""
    return list(state.bins_by_rank())


def rank_positions(state: LoadState) -> np.ndarray:
    """Inverse of :func:`sorted_ranks`: ``pos[i]`` is bin ``i``'s 0-based rank."""
    order = np.lexsort((np.arange(state.n), -state.loads))
    pos = np.empty(state.n, dtype=np.int64)
    pos[order] = np.arange(state.n)
    return pos


class ProbabilityVector:
    """Sampling distribution over sorted load ranks (index 0 = heaviest).

    Exact vectors keep integer numerators over a common denominator; float
    vectors are checked against a 1e-12 tolerance.
    """

    TOL = 1e-12

    def __init__(self, probs, denominator: int | None = None) -> None:
        if denominator is not None:
            num = np.asarray(probs, dtype=np.int64)
            if (num < 0).any() or int(num.sum()) != denominator:
                raise ValueError("exact probability vector must be non-negative and sum to 1")
            self.numerators: np.ndarray | None = num
            self.denominator: int | None = int(denominator)
            self.probs = num / denominator
        else:
            arr = np.asarray(probs, dtype=np.float64)
            if (arr < 0).any() or abs(arr.sum() - 1.0) > self.TOL * max(1, len(arr)):
                raise ValueError("probability vector must be non-negative and sum to 1")
            self.numerators = None
            self.denominator = None
            self.probs = arr

    @classmethod
    def from_fractions(cls, fracs: Sequence[Fraction]) -> "ProbabilityVector":
        fracs = [Fraction(f) for f in fracs]
        den = math.lcm(*(f.denominator for f in fracs))
        return cls([int(f * den) for f in fracs], denominator=den)

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityVector":
        return cls(np.ones(n, dtype=np.int64), denominator=n)

    @property
    def exact(self) -> bool:
        return self.numerators is not None

    def __len__(self) -> int:
        return len(self.probs)

    def fraction(self, k: int) -> Fraction:
        if self.exact:
            return Fraction(int(self.numerators[k]), self.denominator)
        return Fraction(float(self.probs[k]))

    def fractions(self) -> list[Fraction]:
        return [self.fraction(k) for k in range(len(self))]

    def __repr__(self) -> str:
        if self.exact:
            return f"ProbabilityVector({self.numerators.tolist()}, denominator={self.denominator})"
        return f"ProbabilityVector({self.probs.tolist()})"
