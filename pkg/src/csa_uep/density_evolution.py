"""Asymptotic density evolution: single-edge-type threshold and the per-class recursion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .model import ClassSpec, DegreeDistribution, average_distribution

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 10_000
DEFAULT_EPS = 1e-10
STALL = 1e-14
BRACKET = (0.0, 2.0)


@dataclass(frozen=True)
class DEResult:
    threshold: float
    probes: tuple[tuple[float, bool], ...]
    trajectory: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError(f"non-positive threshold {self.threshold}")


@dataclass(frozen=True)
class MultiEdgeTrajectory:
    """Per-iteration, per-class CN-to-VN erasure ``xi`` and VN erasure ``p``."""

    converged: bool
    xi: np.ndarray
    p: np.ndarray


def derivative_coefficients(dist: DegreeDistribution) -> np.ndarray:
    """Coefficients of the derivative polynomial in ascending powers."""
    return np.array([l * p for l, p in enumerate(dist.probs, start=1)], dtype=np.float64)


@njit(cache=True, nogil=True)
def _horner(coef, x):
    acc = 0.0
    for j in range(coef.shape[0] - 1, -1, -1):
        acc = acc * x + coef[j]
    return acc


@njit(cache=True, nogil=True)
def _single_de(dcoef, g, max_iter, eps, traj):
    record = traj.shape[0] > 0
    xi = 1.0
    if record:
        traj[0] = xi
    for i in range(max_iter):
        new = -math.expm1(-g * _horner(dcoef, xi))
        if record:
            traj[i + 1] = new
        if new < eps:
            return True, new, i + 1
        if xi - new < STALL:
            return False, new, i + 1
        xi = new
    return False, xi, max_iter


@njit(cache=True, nogil=True)
def _bisect_single(dcoef, lo, hi, tol, max_iter, eps):
    empty = np.empty(0)
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        ok, _, _ = _single_de(dcoef, mid, max_iter, eps, empty)
        if ok:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True, nogil=True)
def _multi_de(coefs, dcoefs, alphas, g, max_iter, eps, xi_out, p_out):
    """Per-class recursion with Poisson slot-degree distributions.

    ``coefs[k]`` are the class-k node-perspective coefficients (index = degree),
    ``dcoefs[k]`` its derivative coefficients.  Returns (converged, iterations).
    """
    kappa = coefs.shape[0]
    means = np.empty(kappa)
    davg = np.empty(kappa)
    q = np.empty(kappa)
    xi = np.ones(kappa)
    record = xi_out.shape[0] > 0
    for k in range(kappa):
        davg[k] = _horner(dcoefs[k], 1.0)
        means[k] = g * alphas[k] * davg[k]
    if record:
        for k in range(kappa):
            xi_out[0, k] = 1.0
            p_out[0, k] = _horner(coefs[k], 1.0)
    for i in range(max_iter):
        for k in range(kappa):
            q[k] = _horner(dcoefs[k], xi[k]) / davg[k]
        worst = 0.0
        drop = 1.0
        for k in range(kappa):
            # edge-perspective Poisson for class k times node-perspective Poisson for the others
            log_keep = means[k] * (-q[k])
            for j in range(kappa):
                if j != k:
                    log_keep += means[j] * (-q[j])
            new = -math.expm1(log_keep)
            drop = min(drop, xi[k] - new)
            xi[k] = new
            worst = max(worst, new)
        if record:
            for k in range(kappa):
                xi_out[i + 1, k] = xi[k]
                p_out[i + 1, k] = _horner(coefs[k], xi[k])
        if worst < eps:
            return True, i + 1
        if drop < STALL:
            return False, i + 1
    return False, max_iter


def _class_arrays(classes: Sequence[ClassSpec]):
    d = max(c.dist.d for c in classes)
    coefs = np.zeros((len(classes), d + 1))
    dcoefs = np.zeros((len(classes), d))
    for k, c in enumerate(classes):
        coefs[k, 1 : c.dist.d + 1] = c.dist.probs
        dcoefs[k, : c.dist.d] = derivative_coefficients(c.dist)
    alphas = np.array([c.alpha for c in classes], dtype=np.float64)
    return coefs, dcoefs, alphas


def de_fixed_point(
    avg: DegreeDistribution,
    g: float,
    max_iter: int = DEFAULT_MAX_ITER,
    eps: float = DEFAULT_EPS,
    trajectory: bool = False,
):
    """Iterate ``xi <- 1 - exp(-g * avg'(xi))`` from ``xi = 1``.

    Returns ``(converged, final_xi)``, plus the trajectory array when requested.
    Iteration stops early once the per-step decrease drops below 1e-14.
    """
    if not g > 0:
        raise ValueError(f"load must be positive, got {g}")
    if not 0 < eps <= 1e-6:
        raise ValueError(f"eps must lie in (0, 1e-6], got {eps}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    traj = np.empty(max_iter + 1 if trajectory else 0)
    ok, xi, iters = _single_de(derivative_coefficients(avg), float(g), int(max_iter), float(eps), traj)
    if trajectory:
        return bool(ok), float(xi), traj[: iters + 1].copy()
    return bool(ok), float(xi)


def threshold(
    avg: DegreeDistribution,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    eps: float = DEFAULT_EPS,
    probe_load: float | None = None,
) -> DEResult:
    """Largest load for which the fixed-point iteration drives ``xi`` to zero.

    Bisection on ``[0, 2]`` until the bracket is narrower than ``tol``.  If
    ``probe_load`` is given, the result also carries the trajectory at that load.
    """
    if not 0 < tol <= 1e-2:
        raise ValueError(f"tol must lie in (0, 1e-2], got {tol}")
    dcoef = derivative_coefficients(avg)
    lo, hi = BRACKET
    probes = []
    empty = np.empty(0)
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        ok, _, _ = _single_de(dcoef, mid, max_iter, eps, empty)
        probes.append((mid, bool(ok)))
        if ok:
            lo = mid
        else:
            hi = mid
    traj = None
    if probe_load is not None:
        _, _, traj = de_fixed_point(avg, probe_load, max_iter, eps, trajectory=True)
    return DEResult(0.5 * (lo + hi), tuple(probes), traj)


def fast_threshold(avg: DegreeDistribution, tol: float = DEFAULT_TOL) -> float:
    """Same bisection as :func:`threshold`, entirely inside compiled code."""
    lo, hi = BRACKET
    return float(_bisect_single(derivative_coefficients(avg), lo, hi, tol, DEFAULT_MAX_ITER, DEFAULT_EPS))


def multi_edge_de(
    classes: Sequence[ClassSpec],
    g: float,
    max_iter: int = DEFAULT_MAX_ITER,
    eps: float = DEFAULT_EPS,
) -> MultiEdgeTrajectory:
    """Run the per-class (multi-edge-type) recursion at load ``g``.

    Rows of the returned arrays are iterations (row 0 is the all-erased start),
    columns are classes.
    """
    coefs, dcoefs, alphas = _class_arrays(classes)
    kappa = len(classes)
    xi = np.empty((max_iter + 1, kappa))
    p = np.empty((max_iter + 1, kappa))
    ok, iters = _multi_de(coefs, dcoefs, alphas, float(g), int(max_iter), float(eps), xi, p)
    return MultiEdgeTrajectory(bool(ok), xi[: iters + 1].copy(), p[: iters + 1].copy())


def multi_edge_threshold(
    classes: Sequence[ClassSpec],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    eps: float = DEFAULT_EPS,
) -> float:
    """Bisection threshold where convergence means every class's erasure vanishes."""
    coefs, dcoefs, alphas = _class_arrays(classes)
    empty = np.empty((0, len(classes)))
    lo, hi = BRACKET
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        ok, _ = _multi_de(coefs, dcoefs, alphas, mid, max_iter, eps, empty, empty)
        if ok:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def grid_threshold(avg: DegreeDistribution, points: int = 100_000) -> float:
    """Largest load satisfying ``xi > 1 - exp(-g avg'(xi))`` on a dense grid of ``xi``.

    Rearranged as ``g < -log(1 - xi) / avg'(xi)``; used to cross-check the
    fixed-point reading of the threshold condition.
    """
    xi = np.linspace(0.0, 1.0, points + 1)[1:]
    xi[-1] = np.nextafter(1.0, 0.0)
    dv = np.polynomial.polynomial.polyval(xi, derivative_coefficients(avg))
    with np.errstate(divide="ignore"):
        ratio = np.where(dv > 0, -np.log1p(-xi) / dv, np.inf)
    return float(ratio.min())


def threshold_of_classes(classes: Sequence[ClassSpec], tol: float = DEFAULT_TOL) -> DEResult:
    return threshold(average_distribution(classes), tol)
