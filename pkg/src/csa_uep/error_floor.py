"""Stopping-set enumeration and the finite-length error-floor approximation.

A stopping set is stored as the multiset of its slot neighbourhoods: each
slot is the tuple of user (variable node) indices it touches.  Users are
labelled so that degrees are non-increasing, which lets canonicalization
permute only within equal-degree blocks.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from .model import ClassSpec, DegreeDistribution, LimitError, UndefinedDegreeError, average_distribution

NU_LIMIT = 5
DEGREE_LIMIT = 8
DEFAULT_NU_MAX = 4


@dataclass(frozen=True)
class StoppingSet:
    """A connected stopping set in canonical form.

    ``c`` counts the labelled graphs on fixed sets of ``nu`` users and ``mu``
    slots isomorphic to this one.  The error-floor sum needs the count with
    user degrees pinned, ``c_fixed_degrees = c * prod(v_j!) / nu!``.
    """

    nu: int
    mu: int
    v: tuple[int, ...]
    biadjacency: tuple[tuple[int, ...], ...]
    c: int
    aut: int
    minimal: bool

    def __post_init__(self) -> None:
        if sum(self.v) != self.nu or len(self.biadjacency) != self.nu:
            raise ValueError("degree histogram does not match the user count")
        if math.factorial(self.nu) * math.factorial(self.mu) != self.c * self.aut:
            raise ValueError(f"c * |Aut| != nu! mu! for {self}")

    @property
    def c_fixed_degrees(self) -> int:
        num = math.prod(math.factorial(x) for x in self.v) * math.factorial(self.mu)
        q, r = divmod(num, self.aut)
        assert r == 0
        return q

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.biadjacency)

    @property
    def slot_neighbourhoods(self) -> tuple[tuple[int, ...], ...]:
        slots: list[list[int]] = [[] for _ in range(self.mu)]
        for u, adj in enumerate(self.biadjacency):
            for s in adj:
                slots[s].append(u)
        return tuple(tuple(x) for x in slots)

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "mu": self.mu,
            "v": list(self.v),
            "c": self.c,
            "aut": self.aut,
            "minimal": self.minimal,
            "biadjacency": [list(a) for a in self.biadjacency],
        }

    @classmethod
    def from_dict(cls, data: dict) -> StoppingSet:
        return cls(
            nu=data["nu"],
            mu=data["mu"],
            v=tuple(data["v"]),
            biadjacency=tuple(tuple(a) for a in data["biadjacency"]),
            c=data["c"],
            aut=data["aut"],
            minimal=data["minimal"],
        )


@dataclass(frozen=True)
class StoppingSetCatalog:
    nu_max: int
    d_max: int
    sets: tuple[StoppingSet, ...]

    def __len__(self) -> int:
        return len(self.sets)

    def __iter__(self) -> Iterator[StoppingSet]:
        return iter(self.sets)

    def only_minimal(self) -> StoppingSetCatalog:
        return StoppingSetCatalog(self.nu_max, self.d_max, tuple(s for s in self.sets if s.minimal))

    def restricted(self, nu_max: int | None = None, degrees: Sequence[int] | None = None) -> StoppingSetCatalog:
        """Sub-catalog with at most ``nu_max`` users whose degrees all lie in ``degrees``."""
        keep = []
        allowed = None if degrees is None else set(degrees)
        for s in self.sets:
            if nu_max is not None and s.nu > nu_max:
                continue
            if allowed is not None and not set(s.degrees) <= allowed:
                continue
            keep.append(s)
        return StoppingSetCatalog(
            self.nu_max if nu_max is None else min(nu_max, self.nu_max),
            self.d_max if degrees is None else min(self.d_max, max(degrees)),
            tuple(keep),
        )

    @cached_property
    def arrays(self):
        """(nu, mu, V, log c_fixed_degrees) as numpy arrays; ``V[s, j-1] = v_j``."""
        count = len(self.sets)
        nu = np.array([s.nu for s in self.sets], dtype=np.int64)
        mu = np.array([s.mu for s in self.sets], dtype=np.int64)
        V = np.zeros((count, self.d_max), dtype=np.int64)
        for i, s in enumerate(self.sets):
            V[i, : len(s.v)] = s.v[: self.d_max]
        logc = np.array([math.log(s.c_fixed_degrees) for s in self.sets], dtype=np.float64)
        return nu, mu, V, logc

    def to_dict(self) -> dict:
        return {"nu_max": self.nu_max, "d_max": self.d_max, "sets": [s.to_dict() for s in self.sets]}

    @classmethod
    def from_dict(cls, data: dict) -> StoppingSetCatalog:
        return cls(data["nu_max"], data["d_max"], tuple(StoppingSet.from_dict(s) for s in data["sets"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> StoppingSetCatalog:
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- enumeration -------------------------------------------------------------


def _slot_types(nu: int) -> list[tuple[int, ...]]:
    """All user subsets of size >= 2, grouped by their smallest member."""
    types = [t for r in range(2, nu + 1) for t in itertools.combinations(range(nu), r)]
    return sorted(types, key=lambda t: (t[0], len(t), t))


def _block_permutations(degrees: Sequence[int]) -> list[tuple[int, ...]]:
    blocks: list[list[int]] = []
    for u, d in enumerate(degrees):
        if blocks and degrees[blocks[-1][0]] == d:
            blocks[-1].append(u)
        else:
            blocks.append([u])
    perms = []
    for combo in itertools.product(*(itertools.permutations(b) for b in blocks)):
        sigma = [0] * len(degrees)
        for block, image in zip(blocks, combo):
            for u, w in zip(block, image):
                sigma[u] = w
        perms.append(tuple(sigma))
    return perms


def canonical_form(slots: Sequence[Sequence[int]], nu: int) -> tuple[tuple[tuple[int, ...], ...], int]:
    """Canonical slot multiset and the number of user permutations fixing it.

    Users must already be labelled with non-increasing degrees.
    """
    degrees = [0] * nu
    for t in slots:
        for u in t:
            degrees[u] += 1
    best = None
    hits = 0
    for sigma in _block_permutations(degrees):
        image = tuple(sorted(tuple(sorted(sigma[u] for u in t)) for t in slots))
        if best is None or image < best:
            best, hits = image, 1
        elif image == best:
            hits += 1
    return best, hits


def _connected(slots: Sequence[Sequence[int]], nu: int) -> bool:
    parent = list(range(nu))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t in slots:
        root = find(t[0])
        for u in t[1:]:
            parent[find(u)] = root
    return len({find(u) for u in range(nu)}) == 1


def is_stopping_set(slots: Sequence[Sequence[int]], users: Sequence[int]) -> bool:
    """Whether the subgraph induced by ``users`` leaves every touched slot with >= 2 of them."""
    chosen = set(users)
    if not chosen:
        return False
    for t in slots:
        inside = sum(1 for u in t if u in chosen)
        if inside == 1:
            return False
    return True


def _is_minimal(slots: Sequence[Sequence[int]], nu: int) -> bool:
    for r in range(1, nu):
        for users in itertools.combinations(range(nu), r):
            if is_stopping_set(slots, users):
                return False
    return True


def _build(canon: tuple[tuple[int, ...], ...], vn_aut: int, nu: int, d_max: int) -> StoppingSet:
    mu = len(canon)
    adjacency: list[list[int]] = [[] for _ in range(nu)]
    for s, t in enumerate(canon):
        for u in t:
            adjacency[u].append(s)
    v = [0] * d_max
    for adj in adjacency:
        v[len(adj) - 1] += 1
    aut = vn_aut * math.prod(math.factorial(k) for k in Counter(canon).values())
    c = math.factorial(nu) * math.factorial(mu) // aut
    return StoppingSet(
        nu=nu,
        mu=mu,
        v=tuple(v),
        biadjacency=tuple(tuple(a) for a in adjacency),
        c=c,
        aut=aut,
        minimal=_is_minimal(canon, nu),
    )


def _enumerate_nu(nu: int, d_max: int) -> dict[tuple, StoppingSet]:
    types = _slot_types(nu)
    # index at which each user's degree becomes final
    last = {u: max(i for i, t in enumerate(types) if t[0] <= u) for u in range(nu)}
    closes: dict[int, list[int]] = {}
    for u, i in last.items():
        closes.setdefault(i, []).append(u)
    deg = [0] * nu
    counts = [0] * len(types)
    found: dict[tuple, StoppingSet] = {}

    def closed_ok(i: int) -> bool:
        for u in closes.get(i, ()):
            if deg[u] < 2 or (u > 0 and deg[u] > deg[u - 1]):
                return False
        return True

    def rec(i: int) -> None:
        if i == len(types):
            slots = [t for t, k in zip(types, counts) for _ in range(k)]
            if _connected(slots, nu):
                canon, vn_aut = canonical_form(slots, nu)
                if canon not in found:
                    found[canon] = _build(canon, vn_aut, nu, d_max)
            return
        t = types[i]
        k = 0
        while True:
            counts[i] = k
            if closed_ok(i):
                rec(i + 1)
            if any(deg[u] >= d_max for u in t):
                break
            for u in t:
                deg[u] += 1
            k += 1
        for u in t:
            deg[u] -= k
        counts[i] = 0

    rec(0)
    return found


@functools.lru_cache(maxsize=None)
def enumerate_stopping_sets(nu_max: int = DEFAULT_NU_MAX, d_max: int = DEGREE_LIMIT) -> StoppingSetCatalog:
    """All connected stopping sets with at most ``nu_max`` users of degree ``2..d_max``.

    Sets are ordered by user count, then canonical form, so the catalog is
    reproducible across runs.
    """
    if nu_max < 1:
        raise ValueError("nu_max must be >= 1")
    if nu_max > NU_LIMIT:
        raise LimitError(f"nu_max = {nu_max} exceeds the enumeration limit {NU_LIMIT}")
    if d_max > DEGREE_LIMIT:
        raise LimitError(f"d_max = {d_max} exceeds the enumeration limit {DEGREE_LIMIT}")
    sets: list[StoppingSet] = []
    if d_max >= 2:
        for nu in range(2, nu_max + 1):
            found = _enumerate_nu(nu, d_max)
            sets.extend(found[k] for k in sorted(found))
    return StoppingSetCatalog(nu_max, d_max, tuple(sets))


def load_or_enumerate(nu_max: int, d_max: int, cache: str | Path | None = None) -> StoppingSetCatalog:
    if cache is not None and Path(cache).exists():
        catalog = StoppingSetCatalog.load(cache)
        if catalog.nu_max >= nu_max and catalog.d_max >= d_max:
            return catalog.restricted(nu_max=nu_max, degrees=range(2, d_max + 1))
    catalog = enumerate_stopping_sets(nu_max, d_max)
    if cache is not None:
        catalog.save(cache)
    return catalog


# -- error-floor approximation -----------------------------------------------


def _log_falling(x: int, k: np.ndarray | int) -> np.ndarray:
    """``log(x (x-1) ... (x-k+1))`` for integer ``0 <= k <= x``.

    Summing logs of the factors keeps full relative precision, unlike a
    difference of two large log-gamma values.
    """
    k = np.asarray(k, dtype=np.int64)
    top = int(k.max(initial=0))
    table = np.concatenate(([0.0], np.cumsum(np.log(x - np.arange(top, dtype=np.float64)))))
    return table[k]


def _log_binom(n: int, k: np.ndarray | int) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    return _log_falling(n, k) - gammaln(k + 1.0)


def _log_weights(catalog: StoppingSetCatalog, n: int, m: int, minimal_only: bool):
    """Load-dependent log factor of every set, independent of the distribution.

    Sets that cannot occur (more users than ``m`` or more slots than ``n``) get -inf.
    """
    nu, mu, V, logc = catalog.arrays
    D = V.shape[1]
    degrees = np.arange(1, D + 1)
    possible = (nu <= m) & (mu <= n)
    if minimal_only:
        possible &= np.array([s.minimal for s in catalog.sets], dtype=bool)
    base = (
        _log_falling(m - 1, np.clip(nu - 1, 0, m - 1))
        + logc
        + _log_binom(n, np.minimum(mu, n))
        - V @ _log_binom(n, np.minimum(degrees, n))
        - gammaln(V + 1.0).sum(axis=1)
    )
    return np.where(possible, base, -np.inf)


def plr_degree(
    catalog: StoppingSetCatalog,
    avg: DegreeDistribution,
    n: int,
    m: int,
    l: int,
    minimal_only: bool = False,
) -> float:
    """Error-floor approximation of the probability that a degree-``l`` user is lost.

    Sums, over catalog sets containing a degree-``l`` user, the expected number
    of such sets the user belongs to.  Sets using a degree outside the support
    of ``avg`` contribute nothing.
    """
    if avg[l] <= 0.0:
        raise UndefinedDegreeError(f"degree {l} has zero probability in the average distribution")
    nu, mu, V, _ = catalog.arrays
    if len(catalog) == 0 or l > V.shape[1]:
        return 0.0
    D = V.shape[1]
    lam = np.array([avg[j] for j in range(1, D + 1)])
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    usable = ~((V > 0) & (lam == 0.0)).any(axis=1) & (V[:, l - 1] > 0)
    if not usable.any():
        return 0.0
    Vu = V[usable]
    terms = (
        _log_weights(catalog, n, m, minimal_only)[usable]
        + np.log(Vu[:, l - 1])
        - math.log(avg[l])
        + (Vu * np.where(lam > 0, log_lam, 0.0)).sum(axis=1)
    )
    return math.fsum(np.exp(terms[np.isfinite(terms)]).tolist())


def plr_class(
    catalog: StoppingSetCatalog,
    classes: Sequence[ClassSpec],
    n: int,
    m: int,
    k: int,
    minimal_only: bool = False,
) -> float:
    """Class-``k`` (0-based) PLR prediction: class degree mix of :func:`plr_degree`."""
    avg = average_distribution(classes)
    dist = classes[k].dist
    return math.fsum(
        dist[l] * plr_degree(catalog, avg, n, m, l, minimal_only) for l in dist.support()
    )


class ErrorFloorPolynomial:
    """Error-floor predictions for a fixed (catalog, n, m) as polynomials in the degree masses.

    Collapses the catalog by degree histogram so that evaluating many candidate
    distributions over a small degree set costs a few dozen monomials.
    """

    def __init__(
        self,
        catalog: StoppingSetCatalog,
        n: int,
        m: int,
        degrees: Sequence[int],
        minimal_only: bool = False,
    ) -> None:
        self.degrees = tuple(degrees)
        nu, mu, V, _ = catalog.arrays
        weights = _log_weights(catalog, n, m, minimal_only)
        cols = [j - 1 for j in self.degrees if j <= V.shape[1]]
        inside = np.ones(len(catalog), dtype=bool)
        if len(catalog):
            other = np.ones(V.shape[1], dtype=bool)
            other[cols] = False
            inside = ~(V[:, other] > 0).any(axis=1) & np.isfinite(weights)
        sub = np.zeros((len(catalog), len(self.degrees)), dtype=np.int64)
        for a, j in enumerate(self.degrees):
            if j <= V.shape[1]:
                sub[:, a] = V[:, j - 1]
        self.terms: list[tuple[np.ndarray, np.ndarray]] = []
        for a in range(len(self.degrees)):
            acc: dict[tuple[int, ...], float] = {}
            rows = np.flatnonzero(inside & (sub[:, a] > 0))
            for r in rows:
                e = sub[r].copy()
                e[a] -= 1
                key = tuple(int(x) for x in e)
                acc[key] = acc.get(key, 0.0) + sub[r, a] * math.exp(weights[r])
            keys = sorted(acc)
            exps = np.array(keys, dtype=np.float64).reshape(len(keys), len(self.degrees))
            coef = np.array([acc[key] for key in keys], dtype=np.float64)
            self.terms.append((exps, coef))

    def per_degree(self, avg_masses: np.ndarray) -> np.ndarray:
        """``p_l`` for each degree in ``self.degrees`` given the average masses."""
        out = np.empty(len(self.degrees))
        for a, (exps, coef) in enumerate(self.terms):
            out[a] = float(np.prod(avg_masses**exps, axis=1) @ coef) if coef.size else 0.0
        return out

    def class_plrs(self, class_masses: np.ndarray, alphas: np.ndarray) -> np.ndarray:
        """PLR prediction per class; ``class_masses[k, a]`` is class k's mass on ``degrees[a]``."""
        return class_masses @ self.per_degree(alphas @ class_masses)
