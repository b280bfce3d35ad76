"""Brute-force oracles that share no code with the package's canonicalization."""

from __future__ import annotations

import itertools
import math

import networkx as nx
from networkx.algorithms import isomorphism


def bipartite(slot_neighbourhoods, nu: int) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from((("v", u) for u in range(nu)), side=0)
    for s, users in enumerate(slot_neighbourhoods):
        graph.add_node(("c", s), side=1)
        graph.add_edges_from((("v", u), ("c", s)) for u in users)
    return graph


def same_shape(a: nx.Graph, b: nx.Graph) -> bool:
    return nx.is_isomorphic(a, b, node_match=isomorphism.categorical_node_match("side", None))


def slot_types(nu: int) -> list[tuple[int, ...]]:
    return [t for r in range(2, nu + 1) for t in itertools.combinations(range(nu), r)]


def compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def labelled_count(stopping_set) -> int:
    """Labelled graphs on ``nu`` users and ``mu`` slots (both labelled) isomorphic to the set.

    A labelled graph is an assignment of a user subset to every labelled slot;
    assignments sharing a vector of per-subset counts number ``mu! / prod(k!)``.
    """
    nu, mu = stopping_set.nu, stopping_set.mu
    target = bipartite(stopping_set.slot_neighbourhoods, nu)
    target_degrees = sorted(len(a) for a in stopping_set.biadjacency)
    types = slot_types(nu)
    total = 0
    for counts in compositions(mu, len(types)):
        degrees = [0] * nu
        for t, k in zip(types, counts):
            for u in t:
                degrees[u] += k
        if sorted(degrees) != target_degrees:
            continue
        slots = [t for t, k in zip(types, counts) for _ in range(k)]
        if same_shape(bipartite(slots, nu), target):
            total += math.factorial(mu) // math.prod(math.factorial(k) for k in counts)
    return total


def all_stopping_set_shapes(nu: int, d_max: int) -> list[nx.Graph]:
    """Isomorphism classes of connected stopping sets with exactly ``nu`` users, by brute force."""
    types = slot_types(nu)
    shapes: list[nx.Graph] = []
    max_mu = nu * d_max // 2
    for mu in range(1, max_mu + 1):
        for counts in compositions(mu, len(types)):
            degrees = [0] * nu
            for t, k in zip(types, counts):
                for u in t:
                    degrees[u] += k
            if min(degrees) < 2 or max(degrees) > d_max:
                continue
            graph = bipartite([t for t, k in zip(types, counts) for _ in range(k)], nu)
            if not nx.is_connected(graph):
                continue
            if not any(same_shape(graph, other) for other in shapes):
                shapes.append(graph)
    return shapes
