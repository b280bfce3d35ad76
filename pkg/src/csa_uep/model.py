"""Degree distributions, user classes and scenario configuration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

NORM_TOL = 1e-12
CLASS_ASSIGNMENTS = ("stochastic", "fixed_fraction")


class CSAError(ValueError):
    """Base class for errors raised by this package."""


class InvalidConfigError(CSAError):
    pass


class DomainError(CSAError):
    pass


class LimitError(CSAError):
    pass


class UndefinedDegreeError(CSAError):
    pass


@dataclass(frozen=True)
class DegreeDistribution:
    """PMF over repetition degrees; ``probs[l - 1]`` is the probability of degree ``l``.

    Trailing zero degrees are stripped on construction so that ``d`` is always
    the largest degree with non-zero mass.
    """

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        if any(not math.isfinite(p) or p < 0.0 for p in probs):
            raise InvalidConfigError(f"degree probabilities must be finite and >= 0, got {probs}")
        total = math.fsum(probs)
        if abs(total - 1.0) > NORM_TOL:
            raise InvalidConfigError(f"degree probabilities sum to {total!r}, not 1")
        while probs and probs[-1] == 0.0:
            probs = probs[:-1]
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int | str, float]) -> DegreeDistribution:
        """Build from ``{degree: prob}``; degrees may be ints or decimal strings."""
        items = {int(k): float(v) for k, v in mapping.items()}
        if not items:
            raise InvalidConfigError("empty degree distribution")
        if min(items) < 1:
            raise InvalidConfigError(f"degrees must be >= 1, got {sorted(items)}")
        probs = [0.0] * max(items)
        for degree, p in items.items():
            probs[degree - 1] = p
        return cls(tuple(probs))

    @classmethod
    def monomial(cls, degree: int) -> DegreeDistribution:
        return cls.from_mapping({degree: 1.0})

    @property
    def d(self) -> int:
        return len(self.probs)

    def __getitem__(self, degree: int) -> float:
        """Probability of ``degree``; zero outside ``1..d``."""
        if 1 <= degree <= len(self.probs):
            return self.probs[degree - 1]
        return 0.0

    def support(self) -> tuple[int, ...]:
        return tuple(l for l, p in enumerate(self.probs, start=1) if p > 0.0)

    def to_mapping(self) -> dict[str, float]:
        return {str(l): p for l, p in enumerate(self.probs, start=1) if p > 0.0}

    def eval(self, x: float) -> float:
        _check_unit(x)
        acc = 0.0
        for p in reversed(self.probs):
            acc = acc * x + p
        return acc * x

    def eval_derivative(self, x: float) -> float:
        _check_unit(x)
        acc = 0.0
        for l in range(len(self.probs), 0, -1):
            acc = acc * x + l * self.probs[l - 1]
        return acc

    def average_degree(self) -> float:
        return self.eval_derivative(1.0)

    def mean_inverse_shift(self) -> float:
        """Sum of ``probs[l] / (l + 1)``."""
        return math.fsum(p / (l + 1) for l, p in enumerate(self.probs, start=1))


def _check_unit(x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x!r}")


@dataclass(frozen=True)
class ClassSpec:
    alpha: float
    dist: DegreeDistribution
    target_plr: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidConfigError(f"class alpha must lie in (0, 1], got {self.alpha!r}")
        if self.target_plr is not None and not 0.0 < self.target_plr < 1.0:
            raise InvalidConfigError(f"target_plr must lie in (0, 1), got {self.target_plr!r}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "target_plr": self.target_plr, "dist": self.dist.to_mapping()}

    @classmethod
    def from_dict(cls, data: Mapping) -> ClassSpec:
        target = data.get("target_plr")
        return cls(
            alpha=float(data["alpha"]),
            dist=DegreeDistribution.from_mapping(data["dist"]),
            target_plr=None if target is None else float(target),
        )


def _check_alphas(classes: Sequence[ClassSpec]) -> None:
    if not classes:
        raise InvalidConfigError("at least one class is required")
    total = math.fsum(c.alpha for c in classes)
    if abs(total - 1.0) > NORM_TOL:
        raise InvalidConfigError(f"class alphas sum to {total!r}, not 1")


def average_distribution(classes: Sequence[ClassSpec]) -> DegreeDistribution:
    """Alpha-weighted mixture of the class distributions."""
    _check_alphas(classes)
    d = max(c.dist.d for c in classes)
    return DegreeDistribution(tuple(math.fsum(c.alpha * c.dist[l] for c in classes) for l in range(1, d + 1)))


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    g: float
    classes: tuple[ClassSpec, ...]
    class_assignment: str = "stochastic"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        if int(self.n) != self.n or self.n < 1:
            raise InvalidConfigError(f"frame length n must be a positive integer, got {self.n!r}")
        if not (math.isfinite(self.g) and self.g > 0):
            raise InvalidConfigError(f"load g must be positive, got {self.g!r}")
        if self.class_assignment not in CLASS_ASSIGNMENTS:
            raise InvalidConfigError(
                f"class_assignment must be one of {CLASS_ASSIGNMENTS}, got {self.class_assignment!r}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        _check_alphas(self.classes)
        if self.m < 1:
            raise InvalidConfigError(f"round(g*n) must be >= 1, got m = {self.m} for g = {self.g}, n = {self.n}")
        for k, c in enumerate(self.classes):
            if c.dist.d > self.n:
                raise InvalidConfigError(f"class {k} has max degree {c.dist.d} > n = {self.n}")

    @property
    def m(self) -> int:
        return round_half_away(self.g * self.n)

    @property
    def kappa(self) -> int:
        return len(self.classes)

    @property
    def realized_load(self) -> float:
        return self.m / self.n

    @property
    def alphas(self) -> tuple[float, ...]:
        return tuple(c.alpha for c in self.classes)

    def average_distribution(self) -> DegreeDistribution:
        return average_distribution(self.classes)

    def with_load(self, g: float) -> ScenarioConfig:
        return ScenarioConfig(self.n, g, self.classes, self.class_assignment, self.seed)

    def with_seed(self, seed: int) -> ScenarioConfig:
        return ScenarioConfig(self.n, self.g, self.classes, self.class_assignment, seed)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "g": self.g,
            "seed": self.seed,
            "class_assignment": self.class_assignment,
            "classes": [c.to_dict() for c in self.classes],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ScenarioConfig:
        try:
            return cls(
                n=int(data["n"]),
                g=float(data["g"]),
                classes=tuple(ClassSpec.from_dict(c) for c in data["classes"]),
                class_assignment=data.get("class_assignment", "stochastic"),
                seed=int(data.get("seed", 0)),
            )
        except KeyError as exc:
            raise InvalidConfigError(f"missing key {exc.args[0]!r} in scenario config") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> ScenarioConfig:
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> ScenarioConfig:
        return cls.from_json(Path(path).read_text())


def fixed_fraction_counts(alphas: Iterable[float], m: int) -> tuple[int, ...]:
    """Integer class sizes summing to ``m`` by largest-remainder rounding."""
    alphas = list(alphas)
    quotas = [a * m for a in alphas]
    counts = [math.floor(q) for q in quotas]
    short = m - sum(counts)
    # ties broken by class order
    order = sorted(range(len(alphas)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:short]:
        counts[k] += 1
    return tuple(counts)


@dataclass(frozen=True)
class TableRow:
    """One row of the reference optimized-distribution table."""

    alpha1: float
    targets: tuple[float, float]
    dist1: DegreeDistribution
    dist2: DegreeDistribution
    threshold: float
    label: str = field(default="")

    def classes(self) -> tuple[ClassSpec, ClassSpec]:
        return (
            ClassSpec(self.alpha1, self.dist1, self.targets[0]),
            ClassSpec(round(1.0 - self.alpha1, 12), self.dist2, self.targets[1]),
        )


def _row(label, alpha1, p1, p2, c1, c2, gstar):
    dist = lambda c: DegreeDistribution.from_mapping({2: c[0], 3: c[1], 8: c[2]})  # noqa: E731
    return TableRow(alpha1, (p1, p2), dist(c1), dist(c2), gstar, label)


TABLE1 = (
    _row("a1", 0.1, 1e-5, 1e-2, (0.00, 0.01, 0.99), (0.57, 0.30, 0.13), 0.94),
    _row("a2", 0.1, 1e-4, 1e-3, (0.02, 0.11, 0.87), (0.25, 0.66, 0.09), 0.89),
    _row("a3", 0.1, 1e-5, 1e-3, (0.00, 0.01, 0.99), (0.25, 0.67, 0.08), 0.89),
    _row("a4", 0.1, 1e-5, 1e-4, (0.01, 0.00, 0.99), (0.04, 0.51, 0.45), 0.72),
    _row("b1", 0.2, 1e-5, 1e-2, (0.00, 0.01, 0.99), (0.64, 0.33, 0.03), 0.94),
    _row("b2", 0.2, 1e-4, 1e-3, (0.00, 0.25, 0.75), (0.26, 0.72, 0.02), 0.89),
    _row("b3", 0.2, 1e-5, 1e-3, (0.00, 0.01, 0.99), (0.27, 0.73, 0.00), 0.88),
    _row("b4", 0.2, 1e-5, 1e-4, (0.02, 0.02, 0.96), (0.00, 0.63, 0.37), 0.72),
)
"""Reference distributions for n = 100 and target load 0.5."""


def table1_row(label: str) -> TableRow:
    for row in TABLE1:
        if row.label == label:
            return row
    raise KeyError(label)
