"""Decoding delay: asymptotic low-load analysis and the slot-by-slot SIC decoder."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from ._rng import frame_key
from .graph_sim import FrameGraph, _sample_frame, class_tables, frame_blocks
from .model import ClassSpec, ScenarioConfig


def delay_pdf(l: int, t: float) -> float:
    """Density of the earliest of ``l`` uniform slot positions on [0, 1]."""
    if l < 1:
        raise ValueError(f"degree must be >= 1, got {l}")
    if not 0.0 <= t <= 1.0:
        return 0.0
    return l * (1.0 - t) ** (l - 1)


def mean_delay_degree(l: int) -> float:
    return 1.0 / (l + 1)


def mean_delay_class(spec: ClassSpec) -> float:
    """Asymptotic (vanishing load) mean normalized delay of a class."""
    return spec.dist.mean_inverse_shift()


@dataclass(frozen=True)
class DelayStats:
    """Delay histogram of one class; ``histogram[s]`` counts users decoded after slot ``s``.

    The normalized delay of bin ``s`` is ``(s + 1) / n``.
    """

    n: int
    histogram: np.ndarray
    unresolved: int

    @property
    def resolved(self) -> int:
        return int(self.histogram.sum())

    @property
    def mean(self) -> float:
        if self.resolved == 0:
            return math.nan
        return float(np.arange(1, self.n + 1) @ self.histogram) / (self.n * self.resolved)

    @property
    def resolved_fraction(self) -> float:
        total = self.resolved + self.unresolved
        return self.resolved / total if total else math.nan

    def bin_delays(self) -> np.ndarray:
        return np.arange(1, self.n + 1) / self.n

    def pmf(self) -> np.ndarray:
        return self.histogram / self.resolved if self.resolved else np.zeros(self.n)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DelayStats)
            and self.n == other.n
            and self.unresolved == other.unresolved
            and np.array_equal(self.histogram, other.histogram)
        )


@njit(cache=True, nogil=True)
def _slot_decode(n, m, deg, slots, decoded_at, live, idsum, received, stack):
    for s in range(n):
        live[s] = 0
        idsum[s] = 0
        received[s] = False
    for i in range(m):
        decoded_at[i] = -1
        for j in range(deg[i]):
            s = slots[i, j]
            live[s] += 1
            idsum[s] += i
    for arrival in range(n):
        received[arrival] = True
        if live[arrival] != 1:
            continue
        top = 1
        stack[0] = arrival
        while top > 0:
            top -= 1
            s = stack[top]
            if live[s] != 1:
                continue
            u = idsum[s]
            decoded_at[u] = arrival
            for j in range(deg[u]):
                t = slots[u, j]
                live[t] -= 1
                idsum[t] -= u
                if received[t] and live[t] == 1:
                    stack[top] = t
                    top += 1


@njit(cache=True, nogil=True)
def _delay_block(seed, start, count, n, m, mode, class_cum, class_counts, deg_cum):
    kappa = class_cum.shape[0]
    dmax = deg_cum.shape[1]
    hist = np.zeros((kappa, n), dtype=np.int64)
    unresolved = np.zeros(kappa, dtype=np.int64)
    perm = np.empty(n, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    cls = np.empty(m, dtype=np.int64)
    deg = np.empty(m, dtype=np.int64)
    slots = np.empty((m, dmax), dtype=np.int64)
    decoded_at = np.empty(m, dtype=np.int64)
    live = np.empty(n, dtype=np.int64)
    idsum = np.empty(n, dtype=np.int64)
    received = np.empty(n, dtype=np.bool_)
    stack = np.empty(2 * n + 1, dtype=np.int64)
    for f in range(count):
        key = frame_key(seed, start + f)
        _sample_frame(key, n, m, mode, class_cum, class_counts, deg_cum, perm, state, cls, deg, slots)
        _slot_decode(n, m, deg, slots, decoded_at, live, idsum, received, stack)
        for i in range(m):
            if decoded_at[i] >= 0:
                hist[cls[i], decoded_at[i]] += 1
            else:
                unresolved[cls[i]] += 1
    return hist, unresolved


def slot_decoder(graph: FrameGraph) -> tuple[int | None, ...]:
    """Slot index (0-based) at which each user is first decoded, ``None`` if never.

    Slots arrive in order; after each arrival SIC runs to a fixpoint on the
    slots received so far, and decoded users' copies are cancelled everywhere.
    """
    n, m = graph.n, graph.m
    if m == 0:
        return ()
    deg, slots = graph.as_arrays()
    out = np.empty(m, dtype=np.int64)
    _slot_decode(
        n, m, deg, slots, out, np.empty(n, np.int64), np.empty(n, np.int64),
        np.empty(n, np.bool_), np.empty(2 * n + 1, np.int64),
    )
    return tuple(int(s) if s >= 0 else None for s in out)


def run_delay_monte_carlo(config: ScenarioConfig, trials: int, workers: int = 1) -> tuple[DelayStats, ...]:
    """Per-class delay histograms over ``trials`` frames (same frame streams as the PLR harness)."""
    if trials < 1:
        raise ValueError("trials must be ≥ 1")
    mode, class_cum, counts, deg_cum = class_tables(config)
    seed = np.uint64(config.seed)

    def work(block):
        start, count = block
        return _delay_block(seed, start, count, config.n, config.m, mode, class_cum, counts, deg_cum)

    blocks = frame_blocks(trials)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    hist = np.zeros((config.kappa, config.n), dtype=np.int64)
    unresolved = np.zeros(config.kappa, dtype=np.int64)
    for h, u in results:
        hist += h
        unresolved += u
    return tuple(DelayStats(config.n, hist[k].copy(), int(unresolved[k])) for k in range(config.kappa))


def delay_vs_load(
    config: ScenarioConfig, loads: Sequence[float], trials: int, workers: int = 1
) -> list[tuple[float, tuple[DelayStats, ...]]]:
    return [(g, run_delay_monte_carlo(config.with_load(g), trials, workers)) for g in loads]
