"""Frame graph generation, SIC peeling, and the frame-based Monte Carlo harness."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numba import njit

from ._rng import frame_key, next_below, next_uniform
from .model import ScenarioConfig, fixed_fraction_counts

Z95 = 1.959963984540054
BLOCK_FRAMES = 4096


@dataclass(frozen=True)
class FrameGraph:
    """One realized user/slot bipartite graph.

    ``user_slots[i]`` is the sorted tuple of slots user ``i`` transmits in and
    ``user_class[i]`` its class index.
    """

    n: int
    user_class: tuple[int, ...]
    user_slots: tuple[tuple[int, ...], ...]
    slots: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.user_class) != len(self.user_slots):
            raise ValueError("user_class and user_slots differ in length")
        adjacency: list[list[int]] = [[] for _ in range(self.n)]
        for i, slots in enumerate(self.user_slots):
            if len(set(slots)) != len(slots):
                raise ValueError(f"user {i} repeats a slot: {slots}")
            for s in slots:
                if not 0 <= s < self.n:
                    raise ValueError(f"user {i} uses slot {s} outside 0..{self.n - 1}")
                adjacency[s].append(i)
        object.__setattr__(self, "slots", tuple(tuple(a) for a in adjacency))

    @classmethod
    def from_users(cls, n: int, user_slots: Iterable[Iterable[int]], user_class: Iterable[int] | None = None):
        user_slots = tuple(tuple(sorted(int(x) for x in s)) for s in user_slots)
        if user_class is None:
            user_class = (0,) * len(user_slots)
        return cls(int(n), tuple(int(k) for k in user_class), user_slots)

    @property
    def m(self) -> int:
        return len(self.user_slots)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.user_slots)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Degree vector and a padded ``m x dmax`` slot matrix for the kernels."""
        deg = np.array(self.degrees, dtype=np.int64)
        width = max(1, int(deg.max(initial=0)))
        slots = np.zeros((self.m, width), dtype=np.int64)
        for i, s in enumerate(self.user_slots):
            slots[i, : len(s)] = s
        return deg, slots


@dataclass(frozen=True)
class ClassOutcome:
    users_observed: int
    users_unresolved: int
    plr: float
    halfwidth: float


@dataclass(frozen=True)
class SimOutcome:
    trials: int
    g: float
    realized_load: float
    per_class: tuple[ClassOutcome, ...]
    trace: np.ndarray | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "g": self.g,
            "realized_load": self.realized_load,
            "per_class": [
                {
                    "class": k,
                    "users_observed": c.users_observed,
                    "users_unresolved": c.users_unresolved,
                    "plr": c.plr,
                    "halfwidth": c.halfwidth,
                }
                for k, c in enumerate(self.per_class)
            ],
        }


def confidence_halfwidth(failures: int, observed: int) -> float:
    """95% normal-approximation half-width; rule of three when nothing failed."""
    if observed == 0:
        return math.inf
    if failures == 0:
        return 3.0 / observed
    p = failures / observed
    return Z95 * math.sqrt(p * (1.0 - p) / observed)


# -- kernels ---------------------------------------------------------------


@njit(cache=True, nogil=True)
def _sample_frame(key, n, m, mode, class_cum, class_counts, deg_cum, perm, state, cls_out, deg_out, slots_out):
    state[0] = key
    for s in range(n):
        perm[s] = s
    kappa = class_cum.shape[0]
    if mode == 0:
        for i in range(m):
            u = next_uniform(state)
            k = 0
            while k < kappa - 1 and u >= class_cum[k]:
                k += 1
            cls_out[i] = k
    else:
        i = 0
        for k in range(kappa):
            for _ in range(class_counts[k]):
                cls_out[i] = k
                i += 1
    dmax = deg_cum.shape[1]
    for i in range(m):
        k = cls_out[i]
        u = next_uniform(state)
        l = 1
        while l < dmax and u >= deg_cum[k, l - 1]:
            l += 1
        deg_out[i] = l
        for j in range(l):
            r = j + next_below(state, n - j)
            t = perm[j]
            perm[j] = perm[r]
            perm[r] = t
            slots_out[i, j] = perm[j]


@njit(cache=True, nogil=True)
def _peel(n, m, deg, slots, resolved, live, idsum, stack):
    for s in range(n):
        live[s] = 0
        idsum[s] = 0
    for i in range(m):
        resolved[i] = False
        for j in range(deg[i]):
            s = slots[i, j]
            live[s] += 1
            idsum[s] += i
    top = 0
    for s in range(n):
        if live[s] == 1:
            stack[top] = s
            top += 1
    count = 0
    while top > 0:
        top -= 1
        s = stack[top]
        if live[s] != 1:
            continue
        u = idsum[s]
        resolved[u] = True
        count += 1
        for j in range(deg[u]):
            t = slots[u, j]
            live[t] -= 1
            idsum[t] -= u
            if live[t] == 1:
                stack[top] = t
                top += 1
    return count


@njit(cache=True, nogil=True)
def _mc_block(seed, start, count, n, m, mode, class_cum, class_counts, deg_cum, trace):
    kappa = class_cum.shape[0]
    dmax = deg_cum.shape[1]
    observed = np.zeros(kappa, dtype=np.int64)
    unresolved = np.zeros(kappa, dtype=np.int64)
    perm = np.empty(n, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    cls = np.empty(m, dtype=np.int64)
    deg = np.empty(m, dtype=np.int64)
    slots = np.empty((m, dmax), dtype=np.int64)
    resolved = np.empty(m, dtype=np.bool_)
    live = np.empty(n, dtype=np.int64)
    idsum = np.empty(n, dtype=np.int64)
    stack = np.empty(2 * n + 1, dtype=np.int64)
    record = trace.shape[0] > 0
    for f in range(count):
        key = frame_key(seed, start + f)
        _sample_frame(key, n, m, mode, class_cum, class_counts, deg_cum, perm, state, cls, deg, slots)
        _peel(n, m, deg, slots, resolved, live, idsum, stack)
        for i in range(m):
            observed[cls[i]] += 1
            if not resolved[i]:
                unresolved[cls[i]] += 1
                if record:
                    trace[f, cls[i]] += 1
    return observed, unresolved


# -- python surface ----------------------------------------------------------


def class_tables(config: ScenarioConfig):
    """Cumulative class/degree tables consumed by the sampling kernel."""
    alphas = np.array(config.alphas, dtype=np.float64)
    class_cum = np.cumsum(alphas)
    class_cum[-1] = np.inf
    counts = np.array(fixed_fraction_counts(config.alphas, config.m), dtype=np.int64)
    dmax = max(c.dist.d for c in config.classes)
    deg_cum = np.empty((config.kappa, dmax), dtype=np.float64)
    for k, c in enumerate(config.classes):
        probs = np.zeros(dmax)
        probs[: c.dist.d] = c.dist.probs
        deg_cum[k] = np.cumsum(probs)
        deg_cum[k, c.dist.d - 1 :] = np.inf
    mode = 0 if config.class_assignment == "stochastic" else 1
    return mode, class_cum, counts, deg_cum


def generate_frame(config: ScenarioConfig, rng_stream: int | np.random.Generator) -> FrameGraph:
    """Draw one frame; ``rng_stream`` is a 64-bit stream key or a numpy Generator."""
    if isinstance(rng_stream, np.random.Generator):
        key = int(rng_stream.integers(0, 2**64, dtype=np.uint64))
    else:
        key = int(rng_stream)
    n, m = config.n, config.m
    mode, class_cum, counts, deg_cum = class_tables(config)
    cls = np.empty(m, dtype=np.int64)
    deg = np.empty(m, dtype=np.int64)
    slots = np.empty((m, deg_cum.shape[1]), dtype=np.int64)
    _sample_frame(
        np.uint64(key), n, m, mode, class_cum, counts, deg_cum,
        np.empty(n, dtype=np.int64), np.empty(1, dtype=np.uint64), cls, deg, slots,
    )
    return FrameGraph.from_users(n, (slots[i, : deg[i]] for i in range(m)), cls.tolist())


def peel(graph: FrameGraph) -> frozenset[int]:
    """Indices of users resolved by iterative singleton-slot cancellation."""
    if graph.m == 0:
        return frozenset()
    deg, slots = graph.as_arrays()
    resolved = np.empty(graph.m, dtype=np.bool_)
    n = graph.n
    _peel(n, graph.m, deg, slots, resolved, np.empty(n, np.int64), np.empty(n, np.int64), np.empty(2 * n + 1, np.int64))
    return frozenset(np.flatnonzero(resolved).tolist())


def frame_blocks(trials: int, block: int = BLOCK_FRAMES) -> list[tuple[int, int]]:
    return [(start, min(block, trials - start)) for start in range(0, trials, block)]


def run_monte_carlo(config: ScenarioConfig, trials: int, workers: int = 1, trace: bool = False) -> SimOutcome:
    """Estimate per-class PLR over ``trials`` independent frames.

    Frame ``i`` always uses the stream ``frame_key(seed, i)``, so the outcome is
    identical for any ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be ≥ 1")
    mode, class_cum, counts, deg_cum = class_tables(config)
    seed = np.uint64(config.seed)
    kappa = config.kappa
    trace_arr = np.zeros((trials if trace else 0, kappa), dtype=np.int64)

    def work(block):
        start, count = block
        view = trace_arr[start : start + count] if trace else trace_arr
        return _mc_block(seed, start, count, config.n, config.m, mode, class_cum, counts, deg_cum, view)

    observed = np.zeros(kappa, dtype=np.int64)
    unresolved = np.zeros(kappa, dtype=np.int64)
    blocks = frame_blocks(trials)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    for obs, unres in results:
        observed += obs
        unresolved += unres

    per_class = []
    for k in range(kappa):
        obs, unres = int(observed[k]), int(unresolved[k])
        per_class.append(
            ClassOutcome(obs, unres, unres / obs if obs else math.nan, confidence_halfwidth(unres, obs))
        )
    return SimOutcome(trials, config.g, config.realized_load, tuple(per_class), trace_arr if trace else None)
