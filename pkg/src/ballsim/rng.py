"""Seeded, buffered random draws shared by the reference and compiled engines.

Each repetition gets its own PCG64 stream from ``SeedSequence(seed,
spawn_key=(rep,))``.  That stream is split into two children: one yields
uniform bin indices, the other uniform doubles (coins, biased sampling).
Both are produced in fixed-size chunks, so the value sequence does not
depend on who consumes it or when a refill happens.
"""
from __future__ import annotations

import numpy as np

CHUNK = 1 << 16
RNG_ID = f"numpy.PCG64/SeedSequence(seed,spawn_key=(rep,))/bins+units/chunk={CHUNK}"


class DrawStream:
    def __init__(self, n: int, seed: int, rep: int = 0) -> None:
        if n < 1:
            raise ValueError("n must be positive")
        self.n = n
        self.seed = seed
        self.rep = rep
        ss = np.random.SeedSequence(seed, spawn_key=(rep,))
        bins_ss, units_ss = ss.spawn(2)
        self._bins_gen = np.random.Generator(np.random.PCG64(bins_ss))
        self._units_gen = np.random.Generator(np.random.PCG64(units_ss))
        self.bins = np.empty(0, dtype=np.int64)
        self.bpos = 0
        self.units = np.empty(0, dtype=np.float64)
        self.upos = 0

    def refill_bins(self) -> None:
        fresh = self._bins_gen.integers(0, self.n, size=CHUNK, dtype=np.int64)
        self.bins = np.concatenate([self.bins[self.bpos:], fresh])
        self.bpos = 0

    def refill_units(self) -> None:
        fresh = self._units_gen.random(CHUNK)
        self.units = np.concatenate([self.units[self.upos:], fresh])
        self.upos = 0

    def bin(self) -> int:
        if self.bpos >= len(self.bins):
            self.refill_bins()
        v = int(self.bins[self.bpos])
        self.bpos += 1
        return v

    def unit(self) -> float:
        if self.upos >= len(self.units):
            self.refill_units()
        v = float(self.units[self.upos])
        self.upos += 1
        return v


class ScriptedDraws:
    """Replays fixed draws; used to pin step functions to hand-traced examples."""

    def __init__(self, bins=(), units=()) -> None:
        self._bins = list(bins)
        self._units = list(units)

    def bin(self) -> int:
        if not self._bins:
            raise RuntimeError("scripted bin draws exhausted")
        return self._bins.pop(0)

    def unit(self) -> float:
        if not self._units:
            raise RuntimeError("scripted unit draws exhausted")
        return self._units.pop(0)
