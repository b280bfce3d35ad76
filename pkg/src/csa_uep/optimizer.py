"""Degree-distribution design: maximize the DE threshold under per-class PLR limits.

Each class is parameterized by its masses on all allowed degrees but the
largest; the largest degree takes the remainder.  Constraints enter the
objective as a penalty on the decades by which the predicted PLR exceeds
its target, and a multi-start Nelder-Mead search runs from every point of a
uniform grid over the coordinate simplex.
"""

from __future__ import annotations

import functools
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import density_evolution as de
from .error_floor import DEFAULT_NU_MAX, ErrorFloorPolynomial, enumerate_stopping_sets, plr_class
from .model import ClassSpec, DegreeDistribution, InvalidConfigError, round_half_away

log = logging.getLogger(__name__)

INVALID = -math.inf
MEMO_GRID = 1e-6
MEMO_LIMIT = 200_000


@dataclass(frozen=True)
class NelderMeadParams:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_evals: int = 2000
    tol: float = 1e-4
    initial_step: float = 0.05


@dataclass(frozen=True)
class OptimizationProblem:
    n: int
    g_target: float
    alphas: tuple[float, ...]
    targets: tuple[float, ...]
    degrees: tuple[int, ...] = (2, 3, 8)
    grid_step: float = 0.1
    penalty_weight: float = 10.0
    nm: NelderMeadParams = field(default_factory=NelderMeadParams)
    nu_max: int = DEFAULT_NU_MAX
    minimal_only: bool = False
    de_tol: float = de.DEFAULT_TOL

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        object.__setattr__(self, "degrees", tuple(sorted(int(d) for d in self.degrees)))
        if not self.g_target > 0:
            raise InvalidConfigError(f"target load must be positive, got {self.g_target}")
        if len(self.alphas) != len(self.targets) or not self.alphas:
            raise InvalidConfigError("alphas and targets must be non-empty and of equal length")
        if abs(math.fsum(self.alphas) - 1.0) > 1e-12:
            raise InvalidConfigError(f"alphas sum to {math.fsum(self.alphas)}, not 1")
        if any(not 0.0 < t <= 1.0 for t in self.targets):
            raise InvalidConfigError(f"targets must lie in (0, 1], got {self.targets}")
        if len(self.degrees) < 2 or len(set(self.degrees)) != len(self.degrees):
            raise InvalidConfigError(f"need at least two distinct degrees, got {self.degrees}")
        if self.degrees[0] < 2 or self.degrees[-1] > 8:
            raise InvalidConfigError(f"allowed degrees must lie in 2..8, got {self.degrees}")
        if self.degrees[-1] > self.n:
            raise InvalidConfigError(f"degree {self.degrees[-1]} exceeds frame length {self.n}")
        steps = 1.0 / self.grid_step
        if not self.grid_step > 0 or abs(steps - round(steps)) > 1e-9:
            raise InvalidConfigError(f"grid step must divide 1, got {self.grid_step}")

    @property
    def m(self) -> int:
        return round_half_away(self.g_target * self.n)

    @property
    def free(self) -> int:
        """Free coordinates per class."""
        return len(self.degrees) - 1

    @property
    def kappa(self) -> int:
        return len(self.alphas)

    def masses(self, x: Sequence[float]) -> np.ndarray:
        """Class-by-degree mass matrix for coordinate vector ``x``."""
        x = np.asarray(x, dtype=np.float64).reshape(self.kappa, self.free)
        return np.hstack([x, np.maximum(1.0 - x.sum(axis=1, keepdims=True), 0.0)])

    def valid(self, x: Sequence[float]) -> bool:
        x = np.asarray(x, dtype=np.float64).reshape(self.kappa, self.free)
        return bool((x >= 0.0).all() and (x.sum(axis=1) <= 1.0 + 1e-12).all())

    def distributions(self, x: Sequence[float]) -> tuple[DegreeDistribution, ...]:
        x = np.asarray(x, dtype=np.float64).reshape(self.kappa, self.free)
        out = []
        for row in x:
            mapping = {d: float(p) for d, p in zip(self.degrees[:-1], row)}
            mapping[self.degrees[-1]] = max(1.0 - math.fsum(row), 0.0)
            out.append(DegreeDistribution.from_mapping(mapping))
        return tuple(out)

    def classes(self, x: Sequence[float]) -> tuple[ClassSpec, ...]:
        return tuple(
            ClassSpec(a, dist, t if t < 1.0 else None)
            for a, dist, t in zip(self.alphas, self.distributions(x), self.targets)
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> OptimizationProblem:
        data = dict(data)
        if "nm" in data:
            data["nm"] = NelderMeadParams(**data["nm"])
        for key in ("alphas", "targets", "degrees"):
            if key in data:
                data[key] = tuple(data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> OptimizationProblem:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class OptimizationResult:
    distributions: tuple[DegreeDistribution, ...]
    threshold: float
    predicted_plr: tuple[float, ...]
    feasible: bool
    objective: float
    starts: int
    trace: tuple[float, ...] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "distributions": [d.to_mapping() for d in self.distributions],
            "threshold": self.threshold,
            "predicted_plr": list(self.predicted_plr),
            "feasible": self.feasible,
            "objective": self.objective,
            "starts": self.starts,
            "trace": list(self.trace),
        }


class Objective:
    """Penalized threshold for one problem; callable on a flat coordinate vector."""

    def __init__(self, problem: OptimizationProblem, poly: ErrorFloorPolynomial | None = None):
        self.problem = problem
        if poly is None:
            catalog = enumerate_stopping_sets(problem.nu_max, problem.degrees[-1])
            poly = ErrorFloorPolynomial(catalog, problem.n, problem.m, problem.degrees, problem.minimal_only)
        self.poly = poly
        self.alphas = np.array(problem.alphas)
        self.log_targets = np.log10(np.array(problem.targets))
        self._memo: dict[tuple[int, ...], float] = {}
        dmax = problem.degrees[-1]
        self._dcoef = np.zeros(dmax)
        self._idx = np.array([d - 1 for d in problem.degrees])
        self._deg = np.array(problem.degrees, dtype=np.float64)

    def threshold(self, x: np.ndarray) -> float:
        key = tuple(int(v) for v in np.rint(np.asarray(x) / MEMO_GRID))
        g = self._memo.get(key)
        if g is None:
            avg = self.alphas @ self.problem.masses(np.array(key) * MEMO_GRID)
            self._dcoef[:] = 0.0
            self._dcoef[self._idx] = self._deg * avg
            g = float(de._bisect_single(self._dcoef, de.BRACKET[0], de.BRACKET[1], self.problem.de_tol,
                                        de.DEFAULT_MAX_ITER, de.DEFAULT_EPS))
            if len(self._memo) >= MEMO_LIMIT:
                # values depend only on the key, so dropping them cannot change results
                self._memo.clear()
            self._memo[key] = g
        return g

    def plrs(self, x: np.ndarray) -> np.ndarray:
        return self.poly.class_plrs(self.problem.masses(x), self.alphas)

    def penalty(self, x: np.ndarray) -> float:
        p = self.plrs(x)
        with np.errstate(divide="ignore"):
            excess = np.where(p > 0, np.log10(p) - self.log_targets, -np.inf)
        return self.problem.penalty_weight * float(np.maximum(excess, 0.0).sum())

    def __call__(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=np.float64)
        if not self.problem.valid(x):
            return INVALID
        return self.threshold(x) - self.penalty(x)


@functools.lru_cache(maxsize=8)
def _objective_for(problem: OptimizationProblem) -> Objective:
    return Objective(problem)


def objective(problem: OptimizationProblem, candidate: Sequence[float]) -> float:
    """Penalized objective (higher is better); ``-inf`` for coordinates off the simplex."""
    return _objective_for(problem)(candidate)


def nelder_mead(
    f: Callable[[np.ndarray], float],
    start: Sequence[float],
    params: NelderMeadParams = NelderMeadParams(),
    initial_simplex: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Maximize ``f`` with the classic reflect/expand/contract/shrink simplex method.

    Stops when every vertex is within ``params.tol`` (Euclidean) of the best
    vertex or after ``params.max_evals`` evaluations.
    """
    x0 = np.asarray(start, dtype=np.float64)
    dim = x0.size
    if initial_simplex is None:
        simplex = np.vstack([x0] + [x0 + params.initial_step * e for e in np.eye(dim)])
    else:
        simplex = np.array(initial_simplex, dtype=np.float64)
    # minimize the negation; -inf objective becomes +inf cost
    cost = np.array([-f(v) for v in simplex])
    evals = dim + 1
    rho, chi, gamma, sigma = params.reflection, params.expansion, params.contraction, params.shrink
    while True:
        order = np.argsort(cost, kind="stable")
        simplex, cost = simplex[order], cost[order]
        if np.max(np.linalg.norm(simplex[1:] - simplex[0], axis=1)) < params.tol or evals >= params.max_evals:
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + rho * (centroid - worst)
        fr = -f(xr)
        evals += 1
        if cost[0] <= fr < cost[-2]:
            simplex[-1], cost[-1] = xr, fr
            continue
        if fr < cost[0]:
            xe = centroid + chi * (xr - centroid)
            fe = -f(xe)
            evals += 1
            if fe < fr:
                simplex[-1], cost[-1] = xe, fe
            else:
                simplex[-1], cost[-1] = xr, fr
            continue
        if fr < cost[-1]:
            xc = centroid + gamma * (xr - centroid)
            fc = -f(xc)
            evals += 1
            if fc <= fr:
                simplex[-1], cost[-1] = xc, fc
                continue
        else:
            xcc = centroid + gamma * (worst - centroid)
            fcc = -f(xcc)
            evals += 1
            if fcc < cost[-1]:
                simplex[-1], cost[-1] = xcc, fcc
                continue
        for i in range(1, dim + 1):
            simplex[i] = simplex[0] + sigma * (simplex[i] - simplex[0])
            cost[i] = -f(simplex[i])
        evals += dim
    return simplex[0].copy(), float(-cost[0])


def grid_starts(problem: OptimizationProblem) -> list[np.ndarray]:
    """Grid points of the coordinate simplex, per class, in lexicographic order."""
    steps = round(1.0 / problem.grid_step)
    per_class = [
        c for c in itertools.product(range(steps + 1), repeat=problem.free) if sum(c) <= steps
    ]
    return [
        np.array([i / steps for c in combo for i in c])
        for combo in itertools.product(per_class, repeat=problem.kappa)
    ]


def start_simplex(problem: OptimizationProblem, x0: np.ndarray) -> np.ndarray:
    """Initial simplex around a grid start, stepping inward where the outward step leaves the domain."""
    step = problem.nm.initial_step
    vertices = [x0]
    for i in range(x0.size):
        v = x0.copy()
        v[i] += step
        if not problem.valid(v):
            v[i] -= 2 * step
            if not problem.valid(v):
                # corner of the class simplex: trade mass with the largest sibling coordinate
                v[i] += 2 * step
                lo = i - i % problem.free
                j = max((k for k in range(lo, lo + problem.free) if k != i), key=lambda k: v[k], default=None)
                if j is not None:
                    v[j] -= step
        vertices.append(v)
    return np.vstack(vertices)


def _run_starts(problem: OptimizationProblem, poly: ErrorFloorPolynomial, starts: list[np.ndarray]):
    f = Objective(problem, poly)
    out = []
    for x0 in starts:
        x, value = nelder_mead(f, x0, problem.nm, start_simplex(problem, x0))
        out.append((x, value, f.penalty(x) == 0.0))
    return out


def optimize(problem: OptimizationProblem, workers: int = 1, starts: list[np.ndarray] | None = None) -> OptimizationResult:
    """Multi-start Nelder-Mead over the grid; best feasible result, else best overall."""
    catalog = enumerate_stopping_sets(problem.nu_max, problem.degrees[-1])
    poly = ErrorFloorPolynomial(catalog, problem.n, problem.m, problem.degrees, problem.minimal_only)
    starts = grid_starts(problem) if starts is None else starts
    log.info("optimizing from %d starts with %d worker(s)", len(starts), workers)
    if workers > 1:
        chunks = [starts[i :: workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_starts, [problem] * workers, [poly] * workers, chunks))
        runs = [None] * len(starts)
        for w, part in enumerate(parts):
            for j, r in enumerate(part):
                runs[w + j * workers] = r
    else:
        runs = _run_starts(problem, poly, starts)

    trace = []
    best = -math.inf
    for _, value, _ in runs:
        best = max(best, value)
        trace.append(best)

    order = sorted(range(len(runs)), key=lambda i: (-runs[i][1], i))
    chosen, feasible, plrs = order[0], False, None
    for i in (i for i in order if runs[i][2]):
        classes = problem.classes(runs[i][0])
        candidate = tuple(plr_class(catalog, classes, problem.n, problem.m, k, problem.minimal_only)
                          for k in range(problem.kappa))
        if all(p <= t for p, t in zip(candidate, problem.targets)):
            chosen, feasible, plrs = i, True, candidate
            break
    x, value, _ = runs[chosen]
    classes = problem.classes(x)
    if plrs is None:
        plrs = tuple(plr_class(catalog, classes, problem.n, problem.m, k, problem.minimal_only)
                     for k in range(problem.kappa))
    g_star = de.threshold_of_classes(classes, problem.de_tol).threshold
    return OptimizationResult(
        distributions=tuple(c.dist for c in classes),
        threshold=g_star,
        predicted_plr=plrs,
        feasible=feasible,
        objective=value,
        starts=len(starts),
        trace=tuple(trace),
    )


def format_table(rows: Sequence[tuple[OptimizationProblem, OptimizationResult]]) -> str:
    """Plain-text table: targets, per-class masses on each allowed degree, and the threshold."""
    if not rows:
        return ""
    problem0 = rows[0][0]
    header = [f"p~({k + 1})" for k in range(problem0.kappa)]
    header += [f"L({k + 1})_{d}" for k in range(problem0.kappa) for d in problem0.degrees]
    header += ["g*", "feasible"]
    lines = [" | ".join(f"{h:>8}" for h in header)]
    for problem, result in rows:
        cells = [f"{t:8.0e}" for t in problem.targets]
        cells += [f"{dist[d]:8.2f}" for dist in result.distributions for d in problem.degrees]
        cells += [f"{result.threshold:8.3f}", f"{str(result.feasible):>8}"]
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"
