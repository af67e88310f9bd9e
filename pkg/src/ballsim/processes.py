"""One-round step functions for the allocation processes.

Every process is split into a pure ``propose`` (decide what the round does,
returning a :class:`RoundOutcome`) and :func:`apply_outcome` (mutate the
state).  The public ``step_*`` functions do both.  Verifiers hook in between
so they always see the pre-round state.

Draws come from an object with ``bin()`` (uniform bin index) and ``unit()``
(uniform double in [0, 1)), normally a :class:`ballsim.rng.DrawStream`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import LoadState, ProbabilityVector, ceil_div, deficit, sorted_ranks
from .rng import DrawStream


class Kind(str, enum.Enum):
    ONE_CHOICE = "one_choice"
    D_CHOICE = "d_choice"
    ONE_PLUS_BETA = "one_plus_beta"
    QUANTILE = "quantile"
    PACKING = "packing"
    TIGHT_PACKING = "tight_packing"
    MEMORY = "memory"
    BIASED_PACKING = "biased_packing"


ALIASES = {"two_choice": (Kind.D_CHOICE, {"d": 2})}
PROCESS_NAMES = sorted([k.value for k in Kind] + list(ALIASES))

BIAS_CONSTRUCTORS = ("max", "min", "uniform")


@dataclass(frozen=True)
class ProcessConfig:
    kind: Kind
    d: int = 2
    beta: Fraction = Fraction(1, 2)
    quantile: Fraction = Fraction(1, 2)
    bias_a: Fraction = Fraction(1)
    bias_b: Fraction = Fraction(1)
    bias: str = "max"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        for name in ("beta", "quantile", "bias_a", "bias_b"):
            object.__setattr__(self, name, _as_fraction(getattr(self, name)))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must lie in (0, 1)")
        if self.bias_a < 1 or self.bias_b < 1:
            raise ValueError("bias bounds a, b must be >= 1")
        if self.bias not in BIAS_CONSTRUCTORS:
            raise ValueError(f"unknown bias constructor {self.bias!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_name(cls, name: str, **params) -> "ProcessConfig":
        name = name.lower().replace("-", "_")
        if name in ALIASES:
            kind, fixed = ALIASES[name]
            return cls(kind=kind, **{**params, **fixed})
        try:
            kind = Kind(name)
        except ValueError:
            raise ValueError(f"unknown process {name!r}; choose from {', '.join(PROCESS_NAMES)}") from None
        return cls(kind=kind, **params)

    @property
    def label(self) -> str:
        if self.kind is Kind.D_CHOICE and self.d == 2:
            return "two_choice"
        return self.kind.value

    def params(self) -> dict:
        """Parameters relevant to this kind, as JSON-friendly values."""
        out: dict = {"process": self.label, "seed": self.seed}
        if self.kind is Kind.D_CHOICE:
            out["d"] = self.d
        elif self.kind is Kind.ONE_PLUS_BETA:
            out["beta"] = str(self.beta)
        elif self.kind is Kind.QUANTILE:
            out["quantile"] = str(self.quantile)
        elif self.kind is Kind.BIASED_PACKING:
            out.update(bias=self.bias, bias_a=str(self.bias_a), bias_b=str(self.bias_b))
        return out


def _as_fraction(v) -> Fraction:
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**9)
    return Fraction(v)


@dataclass
class RoundOutcome:
    sampled: tuple[int, ...]
    chosen: int
    deltas: dict[int, int]
    balls_placed: int
    samples_used: int
    cache_before: Optional[int] = None
    cache_after: Optional[int] = None

    def __post_init__(self) -> None:
        if self.balls_placed < 1 or sum(self.deltas.values()) != self.balls_placed:
            raise ValueError("inconsistent outcome: deltas must sum to balls_placed >= 1")
        if any(v < 1 for v in self.deltas.values()):
            raise ValueError("every receiving bin gets at least one ball")

    def to_record(self) -> dict:
        rec = {
            "sampled": list(self.sampled),
            "chosen": self.chosen,
            "deltas": {str(k): v for k, v in sorted(self.deltas.items())},
            "balls": self.balls_placed,
            "samples": self.samples_used,
        }
        if self.cache_before is not None or self.cache_after is not None:
            rec["cache_before"] = self.cache_before
            rec["cache_after"] = self.cache_after
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "RoundOutcome":
        return cls(
            sampled=tuple(rec["sampled"]),
            chosen=rec["chosen"],
            deltas={int(k): v for k, v in rec["deltas"].items()},
            balls_placed=rec["balls"],
            samples_used=rec["samples"],
            cache_before=rec.get("cache_before"),
            cache_after=rec.get("cache_after"),
        )


def _single(sampled, chosen, samples, **kw) -> RoundOutcome:
    return RoundOutcome(tuple(sampled), chosen, {chosen: 1}, 1, samples, **kw)


def apply_outcome(state: LoadState, outcome: RoundOutcome) -> None:
    for b, k in outcome.deltas.items():
        state.add(b, k)
    state.t += 1
    state.S += outcome.samples_used


# --- deterministic allocation rules given the sampled bin ------------------

def packing_allocation(state: LoadState, i: int) -> dict[int, int]:
    """Packing: one ball if ``i`` is overloaded, else fill ``i`` to ``ceil(W/n)+1``."""
    if not state.is_underloaded(i):
        return {i: 1}
    return {i: deficit(state, i) + 1}


def tight_packing_allocation(state: LoadState, i: int) -> dict[int, int]:
    """TightPacking: route the ``deficit(i)+1`` balls to the heaviest underloaded bins.

    The heaviest underloaded bin goes to ``ceil(W/n)+1``; the following ones
    (stable rank order) are filled to ``ceil(W/n)-1``, the last partially.
    """
    if not state.is_underloaded(i):
        return {i: 1}
    n, W = state.n, state.W
    top = ceil_div(W, n)
    remaining = deficit(state, i) + 1
    deltas: dict[int, int] = {}
    first = True
    for level in state.levels_desc():
        if n * level >= W:
            continue
        for b in sorted(state.levels[level]):
            if first:
                give = top + 1 - level
                first = False
            else:
                give = min(remaining, top - 1 - level)
            if give > 0:
                deltas[b] = give
                remaining -= give
            if remaining == 0:
                return deltas
    raise AssertionError("tight packing ran out of underloaded capacity")


# --- bias vectors ----------------------------------------------------------

def max_bias_vector(n: int, a, b) -> ProbabilityVector:
    """Mass ``b/n`` on the heaviest ranks, ``1/(an)`` on the rest, remainder on one boundary rank."""
    return ProbabilityVector.from_fractions(_bias_masses(n, Fraction(a), Fraction(b)))


def min_bias_vector(n: int, a, b) -> ProbabilityVector:
    return ProbabilityVector.from_fractions(_bias_masses(n, Fraction(a), Fraction(b))[::-1])


def _bias_masses(n: int, a: Fraction, b: Fraction) -> list[Fraction]:
    hi, lo = b / n, 1 / (a * n)
    # largest k with k*hi + (n-k)*lo <= 1
    k = n if hi == lo else min(n, math.floor((1 - n * lo) / (hi - lo)))
    masses = [hi] * k
    if k < n:
        boundary = 1 - k * hi - (n - k - 1) * lo
        masses.append(boundary)
        masses.extend([lo] * (n - k - 1))
    assert sum(masses) == 1 and all(lo <= p <= hi for p in masses)
    return masses


def bias_vector(config: ProcessConfig, n: int) -> ProbabilityVector:
    if config.bias == "max":
        return max_bias_vector(n, config.bias_a, config.bias_b)
    if config.bias == "min":
        return min_bias_vector(n, config.bias_a, config.bias_b)
    return ProbabilityVector.uniform(n)


def validate_bias_vector(vec: ProbabilityVector, n: int, a, b) -> None:
    a, b = Fraction(a), Fraction(b)
    if len(vec) != n:
        raise ValueError(f"bias vector has length {len(vec)}, expected {n}")
    if vec.exact:
        num, den = vec.numerators, vec.denominator
        lo_ok = (num * (a.numerator * n) >= den * a.denominator).all()
        hi_ok = (num * (n * b.denominator) <= den * b.numerator).all()
    else:
        lo_ok = (vec.probs >= float(1 / (a * n)) - ProbabilityVector.TOL).all()
        hi_ok = (vec.probs <= float(b / n) + ProbabilityVector.TOL).all()
    if not (lo_ok and hi_ok):
        raise ValueError(f"bias vector leaves the box [1/(an), b/n] for a={a}, b={b}")


def sample_rank(vec: ProbabilityVector, u: float) -> int:
    cdf = np.cumsum(vec.probs)
    r = int(np.searchsorted(cdf, u, side="right"))
    return min(r, len(cdf) - 1)


# --- propose functions -----------------------------------------------------

def propose_one_choice(state: LoadState, rng) -> RoundOutcome:
    i = rng.bin()
    return _single((i,), i, 1)


def propose_d_choice(state: LoadState, rng, d: int) -> RoundOutcome:
    if d < 1:
        raise ValueError("d must be >= 1")
    sampled = tuple(rng.bin() for _ in range(d))
    chosen = min(sampled, key=lambda b: (int(state.loads[b]), b))
    return _single(sampled, chosen, d)


def propose_one_plus_beta(state: LoadState, rng, beta) -> RoundOutcome:
    if rng.unit() < float(beta):
        return propose_d_choice(state, rng, 2)
    return propose_one_choice(state, rng)


def quantile_threshold(state: LoadState, delta) -> int:
    """Load of the bin at rank ``ceil(delta*n)`` (1-based, heaviest first)."""
    q = math.ceil(Fraction(delta) * state.n)
    seen = 0
    for level in state.levels_desc():
        seen += len(state.levels[level])
        if seen >= q:
            return level
    raise AssertionError("quantile rank beyond n")


def propose_quantile(state: LoadState, rng, delta=Fraction(1, 2)) -> RoundOutcome:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    u = rng.bin()
    if int(state.loads[u]) >= quantile_threshold(state, delta):
        v = rng.bin()
        return _single((u, v), v, 2)
    return _single((u,), u, 1)


def propose_packing(state: LoadState, rng) -> RoundOutcome:
    i = rng.bin()
    deltas = packing_allocation(state, i)
    return RoundOutcome((i,), i, deltas, sum(deltas.values()), 1)


def propose_tight_packing(state: LoadState, rng) -> RoundOutcome:
    i = rng.bin()
    deltas = tight_packing_allocation(state, i)
    return RoundOutcome((i,), i, deltas, sum(deltas.values()), 1)


def memory_commit(state: LoadState, u: int, cache: Optional[int]) -> tuple[int, Optional[int]]:
    """(receiving bin, new cache) when ``u`` is sampled with ``cache`` stored."""
    if cache is None:
        return u, u
    xu, xc = int(state.loads[u]), int(state.loads[cache])
    if xu < xc:
        return u, u
    if xu == xc:
        return u, cache
    return cache, cache


def propose_memory(state: LoadState, rng, cache: Optional[int]) -> RoundOutcome:
    u = rng.bin()
    chosen, new_cache = memory_commit(state, u, cache)
    return _single((u,), chosen, 1, cache_before=cache, cache_after=new_cache)


def propose_biased_packing(
    state: LoadState,
    rng,
    bias_vector_fn: Callable[[LoadState], ProbabilityVector],
    a=1,
    b=1,
) -> RoundOutcome:
    vec = bias_vector_fn(state)
    validate_bias_vector(vec, state.n, a, b)
    rank = sample_rank(vec, rng.unit())
    i = sorted_ranks(state)[rank]
    deltas = packing_allocation(state, i)
    return RoundOutcome((i,), i, deltas, sum(deltas.values()), 1)


# --- public step functions (propose + apply) -------------------------------

def step_one_choice(state, rng):
    out = propose_one_choice(state, rng)
    apply_outcome(state, out)
    return out


def step_d_choice(state, rng, d):
    out = propose_d_choice(state, rng, d)
    apply_outcome(state, out)
    return out


def step_one_plus_beta(state, rng, beta):
    out = propose_one_plus_beta(state, rng, beta)
    apply_outcome(state, out)
    return out


def step_quantile(state, rng, delta=Fraction(1, 2)):
    out = propose_quantile(state, rng, delta)
    apply_outcome(state, out)
    return out


def step_packing(state, rng):
    out = propose_packing(state, rng)
    apply_outcome(state, out)
    return out


def step_tight_packing(state, rng):
    out = propose_tight_packing(state, rng)
    apply_outcome(state, out)
    return out


def step_memory(state, rng, cache):
    out = propose_memory(state, rng, cache)
    apply_outcome(state, out)
    return out


def step_biased_packing(state, rng, bias_vector_fn, a=1, b=1):
    out = propose_biased_packing(state, rng, bias_vector_fn, a, b)
    apply_outcome(state, out)
    return out


# --- process driver ---------------------------------------------------------

class Process:
    """A configured process bound to ``n`` bins, carrying cross-round state (the Memory cache)."""

    def __init__(self, config: ProcessConfig, n: int) -> None:
        self.config = config
        self.n = n
        self.cache: Optional[int] = None
        self.vector: Optional[ProbabilityVector] = None
        if config.kind is Kind.BIASED_PACKING:
            self.vector = bias_vector(config, n)
            validate_bias_vector(self.vector, n, config.bias_a, config.bias_b)

    @property
    def kind(self) -> Kind:
        return self.config.kind

    def propose(self, state: LoadState, rng) -> RoundOutcome:
        c, k = self.config, self.kind
        if k is Kind.ONE_CHOICE:
            return propose_one_choice(state, rng)
        if k is Kind.D_CHOICE:
            return propose_d_choice(state, rng, c.d)
        if k is Kind.ONE_PLUS_BETA:
            return propose_one_plus_beta(state, rng, c.beta)
        if k is Kind.QUANTILE:
            return propose_quantile(state, rng, c.quantile)
        if k is Kind.PACKING:
            return propose_packing(state, rng)
        if k is Kind.TIGHT_PACKING:
            return propose_tight_packing(state, rng)
        if k is Kind.MEMORY:
            return propose_memory(state, rng, self.cache)
        vec = self.vector
        return propose_biased_packing(state, rng, lambda _s: vec, c.bias_a, c.bias_b)

    def advance(self, state: LoadState, outcome: RoundOutcome) -> None:
        apply_outcome(state, outcome)
        if self.kind is Kind.MEMORY:
            self.cache = outcome.cache_after

    def effective_vector(self, state: LoadState) -> Optional[ProbabilityVector]:
        """Exact per-round selection distribution over ranks, where defined."""
        if self.kind in (Kind.ONE_CHOICE, Kind.PACKING, Kind.TIGHT_PACKING):
            return ProbabilityVector.uniform(self.n)
        if self.kind is Kind.BIASED_PACKING:
            return self.vector
        if self.kind is Kind.MEMORY:
            from .conditions import effective_vector_memory

            if self.cache is None:
                return ProbabilityVector.uniform(self.n)
            return effective_vector_memory(state, self.cache)
        return None


class Hook:
    """Per-round callback; ``before`` sees the pre-round state, ``after`` the post-round one."""

    def before(self, state: LoadState, outcome: RoundOutcome, process: Process) -> None:
        pass

    def after(self, state: LoadState, outcome: RoundOutcome, process: Process) -> None:
        pass


@dataclass
class Trace:
    config: ProcessConfig
    n: int
    rounds: int
    stride: int
    records: list[RoundOutcome] = field(default_factory=list)
    counters: list[tuple[int, int, int]] = field(default_factory=list)  # (t, W, S)


def run(
    config: ProcessConfig,
    n: int,
    m: int,
    hooks: Iterable[Hook] = (),
    *,
    record: bool = False,
    stride: Optional[int] = None,
    rep: int = 0,
    debug: bool = False,
) -> tuple[LoadState, Trace]:
    """Run ``m`` rounds from the empty configuration on the reference engine."""
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 rounds and n >= 1 bins")
    stride = stride or n
    hooks = list(hooks)
    state = LoadState(n)
    proc = Process(config, n)
    rng = DrawStream(n, config.seed, rep)
    trace = Trace(config, n, m, stride)
    for _ in range(m):
        out = proc.propose(state, rng)
        for h in hooks:
            h.before(state, out, proc)
        proc.advance(state, out)
        if debug:
            state.check()
        if record:
            trace.records.append(out)
        if state.t % stride == 0 or state.t == m:
            trace.counters.append((state.t, state.W, state.S))
        for h in hooks:
            h.after(state, out, proc)
    return state, trace


def replay(n: int, records: Sequence[RoundOutcome]) -> LoadState:
    state = LoadState(n)
    for out in records:
        apply_outcome(state, out)
    return state
