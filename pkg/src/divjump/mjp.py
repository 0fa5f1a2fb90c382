"""Exact simulation of the jump process and Monte Carlo exit-time moments.

The reference path (:func:`step`, :func:`simulate_exit`) is plain numpy and
follows the textbook recipe. :func:`estimate_moments` runs the same chain in
a compiled kernel:

* each replicate draws from its own counter-based stream, a pure function of
  ``(seed, replicate)``, so results do not depend on the thread count;
* jump targets come from Walker alias tables, one per distinct row pattern
  (offsets and rates), which the piecewise-constant fields share widely;
* when only a few distinct total rates occur, holding times are summed per
  rate class at the end of the path: ``k`` exponential holds at rate ``q``
  add up to ``Gamma(k) / q``, which is exact in distribution and saves one
  logarithm per jump.
"""

from __future__ import annotations

import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange, uint64

from .errors import CensoredError, DivJumpError, ValidationError
from .generator import SparseGenerator
from .grid import GridSpec, domain_mask

__all__ = [
    "PathState",
    "ExitSample",
    "MonteCarloEstimate",
    "AbsorbingKnot",
    "step",
    "simulate_exit",
    "estimate_moments",
    "jump_tables",
    "set_threads",
    "get_threads",
    "warm_up",
    "write_samples",
]

MAX_JUMPS = 10**9
MAX_CLASSES = 64
_GOLDEN = 0x9E3779B97F4A7C15


class AbsorbingKnot(DivJumpError):
    """The current knot has total rate zero."""


@dataclass(frozen=True)
class PathState:
    """Current knot (None once the path has left the grid box) and clock."""

    knot: np.ndarray | None
    clock: float


@dataclass(frozen=True)
class ExitSample:
    theta: float
    exit_knot: np.ndarray | None
    jumps: int


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Sample moments of the first exit time.

    ``variance`` is the unbiased sample variance; ``se_variance`` uses the
    fourth central moment. Censored replicates are excluded from all
    moments and counted in ``censored``.
    """

    mean: float
    variance: float
    se_mean: float
    se_variance: float
    n: int
    seed: int
    censored: int = 0
    total_jumps: int = 0
    wall_time: float = 0.0
    threads: int = 1
    samples: dict | None = field(default=None, repr=False, compare=False)

    def to_dict(self, include_timings=True):
        out = {"mean": self.mean, "variance": self.variance, "se_mean": self.se_mean,
               "se_variance": self.se_variance, "n": self.n, "seed": self.seed,
               "censored": self.censored, "total_jumps": self.total_jumps}
        if include_timings:
            out["wall_time"] = self.wall_time
            out["threads"] = self.threads
        return out


# thread control

def get_threads():
    return numba.get_num_threads()


def set_threads(n=None):
    """Set the kernel thread count; ``None`` reads ``DIVJUMP_THREADS``.

    Values above the pool size fixed at import (``NUMBA_NUM_THREADS``) are
    clamped with a warning.
    """
    if n is None:
        env = os.environ.get("DIVJUMP_THREADS")
        if not env:
            return get_threads()
        n = int(env)
    if n < 1:
        raise ValidationError("thread count must be positive")
    cap = numba.config.NUMBA_NUM_THREADS
    if n > cap:
        warnings.warn(f"{n} threads requested, pool has {cap}; set NUMBA_NUM_THREADS before start-up",
                      RuntimeWarning, stacklevel=2)
        n = cap
    numba.set_num_threads(n)
    return n


# reference simulator

def _row(G: SparseGenerator, flat):
    A = G.A
    lo, hi = A.indptr[flat], A.indptr[flat + 1]
    cols = A.indices[lo:hi]
    vals = A.data[lo:hi]
    off = cols != flat
    return cols[off], -vals[off], float(G.leak[flat])


def step(G: SparseGenerator, state: PathState, rng: np.random.Generator) -> PathState:
    """One jump: exponential hold, then a target drawn proportionally to rate.

    Raises
    ------
    AbsorbingKnot
        If the total rate at the current knot is zero.
    """
    spec = G.spec
    flat = int(spec.flat_index(state.knot))
    if flat < 0:
        raise ValidationError(f"knot {state.knot} outside the grid")
    cols, rates, leak = _row(G, flat)
    q = rates.sum() + leak
    if q <= 0:
        raise AbsorbingKnot(f"knot {tuple(state.knot)} has no outgoing rate")
    clock = state.clock + rng.exponential(1.0 / q)
    probs = np.append(rates, leak) / q
    j = rng.choice(len(probs), p=probs)
    knot = None if j == len(cols) else spec.multi_index(cols[j])
    return PathState(knot, clock)


def _resolve_domain(spec, D):
    try:
        return domain_mask(spec, D)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _start_knot(spec, x0, mask):
    k = spec.nearest_knot(np.asarray(x0, dtype=float))
    flat = int(spec.flat_index(k))
    if flat < 0 or not mask[flat]:
        raise ValidationError(f"start point {np.asarray(x0).tolist()} is not inside the domain")
    return k, flat


def simulate_exit(G: SparseGenerator, x0, D, rng: np.random.Generator, max_jumps: int = MAX_JUMPS) -> ExitSample:
    """Run one path from ``x0`` until it first occupies a knot outside ``D``.

    Returns a sample with ``theta = nan`` when ``max_jumps`` is exceeded.
    """
    spec = G.spec
    mask = _resolve_domain(spec, D)
    k, _ = _start_knot(spec, x0, mask)
    state = PathState(k, 0.0)
    for jumps in range(1, max_jumps + 1):
        state = step(G, state, rng)
        if state.knot is None or not mask[spec.flat_index(state.knot)]:
            return ExitSample(state.clock, state.knot, jumps)
    return ExitSample(math.nan, state.knot, max_jumps)


# compiled kernel

@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(inline="always")
def _uniform(key, ctr):
    # 53-bit float in the open interval (0, 1)
    return ((_mix(key + ctr * uint64(_GOLDEN)) >> uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _stream_key(seed, rep):
    return _mix(uint64(seed) ^ _mix(uint64(rep) + uint64(_GOLDEN)))


@njit(cache=True)
def _gamma(shape, key, ctr):
    """Marsaglia-Tsang Gamma(shape, 1) for shape >= 1; returns (value, ctr)."""
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        ctr += uint64(1)
        u1 = _uniform(key, ctr)
        ctr += uint64(1)
        u2 = _uniform(key, ctr)
        x = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        ctr += uint64(1)
        u = _uniform(key, ctr)
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v, ctr


@njit(cache=True)
def _build_alias(probs):
    """Walker/Vose tables for each row of ``probs`` (rows sum to one)."""
    n_pat, w = probs.shape
    prob = np.ones((n_pat, w))
    alias = np.zeros((n_pat, w), dtype=np.int64)
    small = np.empty(w, dtype=np.int64)
    large = np.empty(w, dtype=np.int64)
    for p in range(n_pat):
        scaled = probs[p] * w
        ns = 0
        nl = 0
        for j in range(w):
            alias[p, j] = j
            if scaled[j] < 1.0:
                small[ns] = j
                ns += 1
            else:
                large[nl] = j
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            s = small[ns]
            nl -= 1
            g = large[nl]
            prob[p, s] = scaled[s]
            alias[p, s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small[ns] = g
                ns += 1
            else:
                large[nl] = g
                nl += 1
        for j in range(nl):
            prob[p, large[j]] = 1.0
        for j in range(ns):
            prob[p, small[j]] = 1.0
    return prob, alias


_EXIT_OFF = 1 << 30  # offset sentinel for leaving the grid box
_CHUNK = 512  # replicates per parallel task; fixed so results ignore thread count


@njit(inline="always")
def _advance(key, ctr, k, p, pattern, off_a, off_b, prob, logw, shift, mask, scale):
    # one alias draw: high bits pick the slot, low bits the coin
    ctr = ctr + uint64(1)
    z = _mix(key + ctr * uint64(_GOLDEN))
    b = (p << logw) + np.int64(z >> shift)
    ob = np.int64(off_b[b])
    off = ob + np.int64((z & mask) * scale < prob[b]) * (np.int64(off_a[b]) - ob)
    if off == _EXIT_OFF:
        return ctr, k, np.int64(-2)
    k = k + off
    return ctr, k, np.int64(pattern[k])


@njit(inline="always")
def _hold(use_classes, counts, lane, klass, rate, p, key, ctr, clock):
    if use_classes:
        counts[klass[p]] += 1
    else:
        ctr = ctr + uint64(1)
        clock = clock - math.log(_uniform(key, ctr)) / rate[p]
    return ctr, clock


@njit
def _retire(rep, lane, k, p, n, clock, key, ctr, use_classes, counts, class_rate, theta, jumps, exit_flat):
    if use_classes:
        for c in range(class_rate.shape[0]):
            m = counts[c]
            if m > 0:
                g, ctr = _gamma(float(m), key, ctr)
                clock += g / class_rate[c]
                counts[c] = 0
    theta[rep] = clock if p < 0 else np.nan
    jumps[rep] = n
    exit_flat[rep] = k if p == -1 else -1


@njit(cache=True)
def _run_chunk(lo, hi, start, seed, pattern, off_a, off_b, prob, logw, rate, klass, class_rate,
               use_classes, max_jumps, theta, jumps, exit_flat):
    # four independent replicates interleaved by hand: their dependency
    # chains overlap in the pipeline, which roughly halves the cost per jump
    shift = uint64(64 - logw)
    mask = (uint64(1) << shift) - uint64(1)
    scale = 2.0 ** (logw - 64)
    p_start = np.int64(pattern[start])
    nc = max(class_rate.shape[0], 1)
    cnt0 = np.zeros(nc, dtype=np.int64)
    cnt1 = np.zeros(nc, dtype=np.int64)
    cnt2 = np.zeros(nc, dtype=np.int64)
    cnt3 = np.zeros(nc, dtype=np.int64)
    r0 = lo
    r1 = lo + 1
    r2 = lo + 2
    r3 = lo + 3
    nxt = lo + 4
    k0 = k1 = k2 = k3 = start
    p0 = p1 = p2 = p3 = p_start
    c0 = c1 = c2 = c3 = uint64(0)
    n0 = n1 = n2 = n3 = 0
    t0 = t1 = t2 = t3 = 0.0
    key0 = _stream_key(seed, r0)
    key1 = _stream_key(seed, r1)
    key2 = _stream_key(seed, r2)
    key3 = _stream_key(seed, r3)
    while r0 < hi or r1 < hi or r2 < hi or r3 < hi:
        if r0 < hi:
            c0, t0 = _hold(use_classes, cnt0, 0, klass, rate, p0, key0, c0, t0)
            c0, k0, p0 = _advance(key0, c0, k0, p0, pattern, off_a, off_b, prob, logw, shift, mask, scale)
            n0 += 1
            if p0 < 0 or n0 >= max_jumps:
                _retire(r0, 0, k0, p0, n0, t0, key0, c0, use_classes, cnt0, class_rate, theta, jumps, exit_flat)
                r0 = nxt
                nxt += 1
                k0, p0, c0, n0, t0 = start, p_start, uint64(0), 0, 0.0
                key0 = _stream_key(seed, r0)
        if r1 < hi:
            c1, t1 = _hold(use_classes, cnt1, 1, klass, rate, p1, key1, c1, t1)
            c1, k1, p1 = _advance(key1, c1, k1, p1, pattern, off_a, off_b, prob, logw, shift, mask, scale)
            n1 += 1
            if p1 < 0 or n1 >= max_jumps:
                _retire(r1, 1, k1, p1, n1, t1, key1, c1, use_classes, cnt1, class_rate, theta, jumps, exit_flat)
                r1 = nxt
                nxt += 1
                k1, p1, c1, n1, t1 = start, p_start, uint64(0), 0, 0.0
                key1 = _stream_key(seed, r1)
        if r2 < hi:
            c2, t2 = _hold(use_classes, cnt2, 2, klass, rate, p2, key2, c2, t2)
            c2, k2, p2 = _advance(key2, c2, k2, p2, pattern, off_a, off_b, prob, logw, shift, mask, scale)
            n2 += 1
            if p2 < 0 or n2 >= max_jumps:
                _retire(r2, 2, k2, p2, n2, t2, key2, c2, use_classes, cnt2, class_rate, theta, jumps, exit_flat)
                r2 = nxt
                nxt += 1
                k2, p2, c2, n2, t2 = start, p_start, uint64(0), 0, 0.0
                key2 = _stream_key(seed, r2)
        if r3 < hi:
            c3, t3 = _hold(use_classes, cnt3, 3, klass, rate, p3, key3, c3, t3)
            c3, k3, p3 = _advance(key3, c3, k3, p3, pattern, off_a, off_b, prob, logw, shift, mask, scale)
            n3 += 1
            if p3 < 0 or n3 >= max_jumps:
                _retire(r3, 3, k3, p3, n3, t3, key3, c3, use_classes, cnt3, class_rate, theta, jumps, exit_flat)
                r3 = nxt
                nxt += 1
                k3, p3, c3, n3, t3 = start, p_start, uint64(0), 0, 0.0
                key3 = _stream_key(seed, r3)


@njit(parallel=True, cache=True)
def _exit_kernel(start, seed, n_rep, pattern, off_a, off_b, prob, logw, rate, klass, class_rate,
                 use_classes, max_jumps, theta, jumps, exit_flat):
    n_chunks = (n_rep + _CHUNK - 1) // _CHUNK
    for c in prange(n_chunks):
        lo = c * _CHUNK
        _run_chunk(lo, min(lo + _CHUNK, n_rep), start, seed, pattern, off_a, off_b, prob, logw, rate, klass,
                   class_rate, use_classes, max_jumps, theta, jumps, exit_flat)


@dataclass(frozen=True)
class JumpTables:
    """Per-knot pattern index and per-pattern alias tables.

    ``pattern`` is -1 at knots outside the domain. Pattern rows are padded
    to width ``2**logw`` with zero-probability slots; ``off_a`` holds the
    slot offsets and ``off_b`` the offsets of their aliases, both flattened.
    """

    pattern: np.ndarray
    offsets: np.ndarray
    probs: np.ndarray
    prob: np.ndarray
    alias: np.ndarray
    rate: np.ndarray
    klass: np.ndarray
    class_rate: np.ndarray

    @property
    def n_patterns(self):
        return len(self.rate)

    @property
    def width(self):
        return self.offsets.shape[1]

    @property
    def logw(self):
        return int(self.width).bit_length() - 1

    @property
    def use_classes(self):
        return len(self.class_rate) <= MAX_CLASSES

    @property
    def off_a(self):
        return self.offsets.ravel()

    @property
    def off_b(self):
        return np.take_along_axis(self.offsets, self.alias, axis=1).ravel()


def jump_tables(G: SparseGenerator, mask: np.ndarray) -> JumpTables:
    """Deduplicate the rows of knots in ``mask`` into jump patterns."""
    A = G.A
    if G.spec.size >= _EXIT_OFF:
        raise ValidationError(f"grid of {G.spec.size} knots is too large for 32-bit jump tables")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValidationError("the domain contains no knots")
    sub = A[rows].tocoo()
    src = rows[sub.row]
    keep = sub.col != src
    r_idx, cols, rates = sub.row[keep], sub.col[keep], -sub.data[keep]
    counts = np.bincount(r_idx, minlength=len(rows))
    leak = G.leak[rows]
    need = int(counts.max(initial=0) + (1 if np.any(leak > 0) else 0))
    width = 2
    while width < need:
        width *= 2
    off = np.zeros((len(rows), width), dtype=np.int32)
    rt = np.zeros((len(rows), width))
    slot = np.arange(len(r_idx)) - np.repeat(np.cumsum(counts) - counts, counts)
    off[r_idx, slot] = cols - rows[r_idx]
    rt[r_idx, slot] = rates
    has_leak = leak > 0
    off[has_leak, counts[has_leak]] = _EXIT_OFF
    rt[has_leak, counts[has_leak]] = leak[has_leak]
    q = G.A.diagonal()[rows]
    if np.any(q <= 0):
        bad = rows[np.argmin(q)]
        raise AbsorbingKnot(f"knot {tuple(G.spec.multi_index(bad))} inside the domain has no outgoing rate")
    key = np.concatenate([off.astype(np.float64), rt, q[:, None]], axis=1)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    p_off = off[first]
    p_rate = q[first]
    probs = rt[first] / rt[first].sum(axis=1, keepdims=True)
    prob, alias = _build_alias(probs)
    class_rate, klass = np.unique(p_rate, return_inverse=True)
    pattern = np.full(G.spec.size, -1, dtype=np.int32)
    pattern[rows] = inv
    return JumpTables(pattern, p_off, probs, prob, alias, p_rate, klass.ravel().astype(np.int32), class_rate)


def _moments(theta):
    n = len(theta)
    mean = float(np.mean(theta))
    dev = theta - mean
    m2 = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    var = m2 * n / (n - 1)
    se_mean = math.sqrt(var / n)
    var_of_var = max(m4 - (n - 3) / (n - 1) * var * var, 0.0) / n
    return mean, var, se_mean, math.sqrt(var_of_var)


def estimate_moments(G: SparseGenerator, x0, D, N: int, seed: int, threads: int | None = None,
                     max_jumps: int = MAX_JUMPS, keep_samples: bool = False,
                     tables: JumpTables | None = None) -> MonteCarloEstimate:
    """Monte Carlo mean and variance of the first exit time from ``D``.

    Replicate ``i`` uses stream ``i`` of ``seed``, so the estimate is the
    same for every thread count.

    Parameters
    ----------
    D : bool mask over knots, box bounds ``(d, 2)`` or a predicate on positions
    max_jumps : int
        Paths longer than this are censored and excluded, with a warning.

    Raises
    ------
    CensoredError
        If every replicate is censored.
    """
    if N < 2:
        raise ValidationError("at least two replicates are needed")
    if threads is not None:
        set_threads(threads)
    spec = G.spec
    mask = _resolve_domain(spec, D)
    _, start = _start_knot(spec, x0, mask)
    t0 = time.perf_counter()
    if tables is None:
        tables = jump_tables(G, mask)
    theta = np.empty(N)
    jumps = np.empty(N, dtype=np.int64)
    exit_flat = np.empty(N, dtype=np.int64)
    _exit_kernel(np.int64(start), np.uint64(seed % 2**64), np.int64(N), tables.pattern, tables.off_a,
                 tables.off_b, tables.prob.ravel(), np.int64(tables.logw), tables.rate, tables.klass,
                 tables.class_rate, tables.use_classes, np.int64(max_jumps), theta, jumps, exit_flat)
    wall = time.perf_counter() - t0
    ok = np.isfinite(theta)
    n_cens = int(N - ok.sum())
    if n_cens == N:
        raise CensoredError(f"all {N} replicates exceeded {max_jumps} jumps")
    if n_cens:
        warnings.warn(f"{n_cens} of {N} replicates censored at {max_jumps} jumps", RuntimeWarning, stacklevel=2)
    if ok.sum() < 2:
        raise CensoredError("fewer than two uncensored replicates")
    mean, var, se_m, se_v = _moments(theta[ok])
    samples = None
    if keep_samples:
        samples = {"theta": theta, "jumps": jumps, "exit_flat": exit_flat}
    return MonteCarloEstimate(mean, var, se_m, se_v, int(ok.sum()), int(seed), n_cens, int(jumps.sum()),
                              wall, get_threads(), samples)


def warm_up():
    """Compile the kernel on a toy chain so later timings exclude compilation."""
    from .coeff import CoefficientField
    from .generator import assemble

    spec = GridSpec.uniform(4, [[0.0, 1.0]])
    G = assemble(CoefficientField.constant([[0.5]]), spec)
    estimate_moments(G, [0.5], [[0.0, 1.0]], 2, 0)


def write_samples(path, est: MonteCarloEstimate, spec: GridSpec):
    """CSV dump: replicate, theta, jumps, exit knot (empty when the box was left)."""
    s = est.samples
    if s is None:
        raise ValidationError("estimate was computed without keep_samples")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("replicate,theta,jumps," + ",".join(f"exit_k{i + 1}" for i in range(spec.dim)) + "\n")
        for i, (t, j, e) in enumerate(zip(s["theta"], s["jumps"], s["exit_flat"])):
            knot = spec.multi_index(e) if e >= 0 else [""] * spec.dim
            fh.write(f"{i},{float(t)!r},{j}," + ",".join(str(v) for v in knot) + "\n")
