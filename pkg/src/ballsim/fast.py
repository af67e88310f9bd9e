"""Compiled bulk engine for statistical experiments.

Consumes exactly the same draws as the reference step functions (see
:mod:`ballsim.rng`) and applies the same rules, including the stable
rank tie rule, so a fast run ends in the same configuration as
:func:`ballsim.processes.run` for the same seed and repetition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from .processes import Kind, ProcessConfig, bias_vector
from .rng import DrawStream

K_ONE, K_D, K_BETA, K_QUANT, K_PACK, K_TIGHT, K_MEM, K_BIAS = range(8)
_KIND_CODE = {
    Kind.ONE_CHOICE: K_ONE,
    Kind.D_CHOICE: K_D,
    Kind.ONE_PLUS_BETA: K_BETA,
    Kind.QUANTILE: K_QUANT,
    Kind.PACKING: K_PACK,
    Kind.TIGHT_PACKING: K_TIGHT,
    Kind.MEMORY: K_MEM,
    Kind.BIASED_PACKING: K_BIAS,
}
_RANKED = (K_QUANT, K_TIGHT, K_BIAS)


@njit(cache=True, nogil=True)
def _promote(order, pos, loads, b):
    # b's load just grew: move it left to its (load desc, index asc) slot
    p = pos[b]
    xb = loads[b]
    lo = 0
    hi = p
    while lo < hi:
        mid = (lo + hi) >> 1
        o = order[mid]
        xo = loads[o]
        if xo > xb or (xo == xb and o < b):
            lo = mid + 1
        else:
            hi = mid
    for k in range(p, lo, -1):
        o = order[k - 1]
        order[k] = o
        pos[o] = k
    order[lo] = b
    pos[b] = lo


@njit(cache=True, nogil=True)
def _advance(kind, loads, order, pos, scal, bins, bpos, units, upos, rounds, d, beta, qrank, cdf, scratch):
    n = loads.shape[0]
    W = scal[0]
    t = scal[1]
    S = scal[2]
    cache = scal[3]
    ranked = kind == K_QUANT or kind == K_TIGHT or kind == K_BIAS
    need_b = 1
    if kind == K_D:
        need_b = d
    elif kind == K_BETA or kind == K_QUANT:
        need_b = 2
    elif kind == K_BIAS:
        need_b = 0
    need_u = 1 if (kind == K_BETA or kind == K_BIAS) else 0
    nb = bins.shape[0]
    nu = units.shape[0]
    done = 0
    while done < rounds:
        if bpos + need_b > nb or upos + need_u > nu:
            break
        if kind == K_PACK or kind == K_BIAS or kind == K_TIGHT:
            if kind == K_BIAS:
                u = units[upos]
                upos += 1
                lo = 0
                hi = n
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if cdf[mid] > u:
                        hi = mid
                    else:
                        lo = mid + 1
                if lo > n - 1:
                    lo = n - 1
                i = order[lo]
            else:
                i = bins[bpos]
                bpos += 1
            S += 1
            if n * loads[i] >= W:
                loads[i] += 1
                W += 1
                if ranked:
                    _promote(order, pos, loads, i)
            elif kind != K_TIGHT:
                top = (W + n - 1) // n
                k = top + 1 - loads[i]
                loads[i] = top + 1
                W += k
                if ranked:
                    _promote(order, pos, loads, i)
            else:
                top = (W + n - 1) // n
                remaining = (W - n * loads[i] + n - 1) // n + 1
                # first rank position holding an underloaded bin
                lo = 0
                hi = n
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if n * loads[order[mid]] >= W:
                        lo = mid + 1
                    else:
                        hi = mid
                cnt = 0
                p = lo
                first = True
                while remaining > 0:
                    b = order[p]
                    if first:
                        give = top + 1 - loads[b]
                        first = False
                    else:
                        give = top - 1 - loads[b]
                        if give > remaining:
                            give = remaining
                    if give > 0:
                        scratch[2 * cnt] = b
                        scratch[2 * cnt + 1] = give
                        cnt += 1
                        remaining -= give
                    p += 1
                for c in range(cnt):
                    b = scratch[2 * c]
                    give = scratch[2 * c + 1]
                    loads[b] += give
                    W += give
                    _promote(order, pos, loads, b)
        elif kind == K_ONE:
            i = bins[bpos]
            bpos += 1
            loads[i] += 1
            W += 1
            S += 1
        elif kind == K_D or kind == K_BETA:
            dd = d
            if kind == K_BETA:
                coin = units[upos]
                upos += 1
                dd = 2 if coin < beta else 1
            best = bins[bpos]
            bpos += 1
            for _ in range(dd - 1):
                s = bins[bpos]
                bpos += 1
                if loads[s] < loads[best] or (loads[s] == loads[best] and s < best):
                    best = s
            loads[best] += 1
            W += 1
            S += dd
        elif kind == K_QUANT:
            u = bins[bpos]
            bpos += 1
            target = u
            S += 1
            if loads[u] >= loads[order[qrank - 1]]:
                target = bins[bpos]
                bpos += 1
                S += 1
            loads[target] += 1
            W += 1
            _promote(order, pos, loads, target)
        else:  # K_MEM
            i = bins[bpos]
            bpos += 1
            if cache < 0:
                target = i
                cache = i
            elif loads[i] < loads[cache]:
                target = i
                cache = i
            elif loads[i] == loads[cache]:
                target = i
            else:
                target = cache
            loads[target] += 1
            W += 1
            S += 1
        t += 1
        done += 1
    scal[0] = W
    scal[1] = t
    scal[2] = S
    scal[3] = cache
    return done, bpos, upos


@dataclass
class Checkpoint:
    t: int
    W: int
    S: int
    max_load: int
    delta_num: int  # n * Delta
    underloaded: int
    log_phi: Optional[float] = None

    def gap_num(self, n: int) -> int:
        return n * self.max_load - self.W


@dataclass
class FastRun:
    config: ProcessConfig
    n: int
    rep: int
    loads: np.ndarray
    W: int
    t: int
    S: int
    checkpoints: list[Checkpoint] = field(default_factory=list)

    @property
    def gap_num(self) -> int:
        return self.n * int(self.loads.max()) - self.W


def checkpoint_stats(loads: np.ndarray, W: int, t: int, S: int, alpha: Optional[float] = None) -> Checkpoint:
    from .potentials import log_phi_from_loads

    n = len(loads)
    num = n * loads - W
    return Checkpoint(
        t=t,
        W=W,
        S=S,
        max_load=int(loads.max()),
        delta_num=int(np.abs(num).sum()),
        underloaded=int(np.count_nonzero(num < 0)),
        log_phi=None if alpha is None else log_phi_from_loads(loads, W, alpha),
    )


def simulate(
    config: ProcessConfig,
    n: int,
    m: int,
    rep: int = 0,
    checkpoints: Sequence[int] = (),
    alpha: Optional[float] = None,
    on_checkpoint: Optional[Callable[[np.ndarray, int, int, int], None]] = None,
) -> FastRun:
    """Run ``m`` rounds; statistics are captured after each round in ``checkpoints``."""
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 rounds and n >= 1 bins")
    code = _KIND_CODE[config.kind]
    stream = DrawStream(n, config.seed, rep)
    loads = np.zeros(n, dtype=np.int64)
    order = np.arange(n, dtype=np.int64)
    pos = np.arange(n, dtype=np.int64)
    scal = np.array([0, 0, 0, -1], dtype=np.int64)
    cdf = np.cumsum(bias_vector(config, n).probs) if code == K_BIAS else np.zeros(1)
    qrank = math.ceil(config.quantile * n) if code == K_QUANT else 1
    scratch = np.zeros(2 * n + 2, dtype=np.int64) if code == K_TIGHT else np.zeros(2, dtype=np.int64)
    beta = float(config.beta)
    d = config.d
    need_b = d if code == K_D else (2 if code in (K_BETA, K_QUANT) else (0 if code == K_BIAS else 1))
    need_u = 1 if code in (K_BETA, K_BIAS) else 0

    run = FastRun(config, n, rep, loads, 0, 0, 0)
    marks = sorted({c for c in checkpoints if 1 <= c <= m})
    targets = marks + ([m] if not marks or marks[-1] != m else [])
    t = 0
    for target in targets:
        while t < target:
            if stream.bpos + need_b > len(stream.bins):
                stream.refill_bins()
            if stream.upos + need_u > len(stream.units):
                stream.refill_units()
            done, stream.bpos, stream.upos = _advance(
                code, loads, order, pos, scal, stream.bins, stream.bpos, stream.units, stream.upos,
                target - t, d, beta, qrank, cdf, scratch,
            )
            t += done
        W, S = int(scal[0]), int(scal[2])
        if target in marks:
            run.checkpoints.append(checkpoint_stats(loads, W, t, S, alpha))
            if on_checkpoint is not None:
                on_checkpoint(loads, W, t, S)
    run.W, run.t, run.S = int(scal[0]), int(scal[1]), int(scal[2])
    return run


@njit(cache=True, nogil=True)
def _memory_steps(loads, state, bins, bpos, steps, sampled, chosen, cache_before, offset):
    # state = [cache]; writes one atomic step per draw
    cache = state[0]
    done = 0
    nb = bins.shape[0]
    while done < steps and bpos < nb:
        i = bins[bpos]
        bpos += 1
        cache_before[offset + done] = cache
        if cache < 0 or loads[i] < loads[cache]:
            target = i
            cache = i
        elif loads[i] == loads[cache]:
            target = i
        else:
            target = cache
        loads[target] += 1
        sampled[offset + done] = i
        chosen[offset + done] = target
        done += 1
    state[0] = cache
    return done, bpos


def memory_atomic_trace(config: ProcessConfig, n: int, m: int, rep: int = 0):
    """``(sampled, bins, cache_before)`` arrays of an ``m``-step Memory run (cache -1 = empty)."""
    if config.kind is not Kind.MEMORY:
        raise ValueError("memory_atomic_trace needs a memory config")
    stream = DrawStream(n, config.seed, rep)
    loads = np.zeros(n, dtype=np.int64)
    state = np.array([-1], dtype=np.int64)
    sampled = np.empty(m, dtype=np.int64)
    chosen = np.empty(m, dtype=np.int64)
    cache_before = np.empty(m, dtype=np.int64)
    t = 0
    while t < m:
        if stream.bpos >= len(stream.bins):
            stream.refill_bins()
        done, stream.bpos = _memory_steps(loads, state, stream.bins, stream.bpos, m - t, sampled, chosen, cache_before, t)
        t += done
    return sampled, chosen, cache_before
