import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import all_stopping_set_shapes, bipartite, labelled_count, same_shape
from csa_uep.error_floor import (
    ErrorFloorPolynomial,
    StoppingSet,
    StoppingSetCatalog,
    canonical_form,
    enumerate_stopping_sets,
    is_stopping_set,
    load_or_enumerate,
    plr_class,
    plr_degree,
)
from csa_uep.graph_sim import run_monte_carlo
from csa_uep.model import (
    ClassSpec,
    DegreeDistribution,
    LimitError,
    ScenarioConfig,
    UndefinedDegreeError,
    average_distribution,
    table1_row,
)


def test_elementary_set():
    catalog = enumerate_stopping_sets(2, 2)
    assert len(catalog) == 1
    (s,) = catalog.sets
    assert (s.nu, s.mu, s.aut, s.c) == (2, 2, 4, 1)
    assert s.v == (0, 2)


def test_six_cycle():
    cycles = [s for s in enumerate_stopping_sets(3, 2) if s.nu == 3 and s.mu == 3]
    assert len(cycles) == 1
    assert cycles[0].aut == 6 and cycles[0].c == 6


def test_single_user_catalog_is_empty():
    assert len(enumerate_stopping_sets(1, 8)) == 0


def test_limits():
    with pytest.raises(LimitError):
        enumerate_stopping_sets(6, 8)
    with pytest.raises(LimitError):
        enumerate_stopping_sets(4, 9)


@pytest.mark.parametrize("nu_max,d_max,size", [(2, 2, 1), (3, 2, 3), (3, 3, 9), (4, 3, 50), (4, 4, 240)])
def test_catalog_sizes(nu_max, d_max, size):
    assert len(enumerate_stopping_sets(nu_max, d_max)) == size


@pytest.mark.parametrize("nu,d_max", [(2, 4), (3, 3), (3, 4), (4, 3)])
def test_catalog_is_complete_against_brute_force(nu, d_max):
    ours = [s for s in enumerate_stopping_sets(nu, d_max) if s.nu == nu]
    shapes = all_stopping_set_shapes(nu, d_max)
    assert len(ours) == len(shapes)
    for s in ours:
        graph = bipartite(s.slot_neighbourhoods, s.nu)
        assert sum(same_shape(graph, other) for other in shapes) == 1


def test_entries_are_pairwise_non_isomorphic():
    catalog = enumerate_stopping_sets(4, 4)
    groups = {}
    for s in catalog:
        groups.setdefault((s.nu, s.mu, s.v), []).append(bipartite(s.slot_neighbourhoods, s.nu))
    for graphs in groups.values():
        for a, b in itertools.combinations(graphs, 2):
            assert not same_shape(a, b)


def test_entry_invariants():
    for s in enumerate_stopping_sets(4, 8):
        slots = s.slot_neighbourhoods
        assert all(len(t) >= 2 for t in slots)
        assert all(len(a) >= 2 for a in s.biadjacency)
        assert sum(s.v) == s.nu
        assert sum(j * x for j, x in enumerate(s.v, start=1)) == sum(len(t) for t in slots)
        assert math.factorial(s.nu) * math.factorial(s.mu) == s.c * s.aut
        assert s.c_fixed_degrees * math.factorial(s.nu) == s.c * math.prod(math.factorial(x) for x in s.v)
        assert is_stopping_set(slots, range(s.nu))


def test_multiplicity_matches_labelled_enumeration():
    for s in enumerate_stopping_sets(3, 4):
        assert s.c == labelled_count(s)


def test_canonical_form_is_relabelling_invariant():
    rng = random.Random(7)
    for s in enumerate_stopping_sets(4, 4):
        slots = list(s.slot_neighbourhoods)
        base, _ = canonical_form(slots, s.nu)
        assert base == tuple(sorted(slots))
        for _ in range(3):
            perm = list(range(s.nu))
            rng.shuffle(perm)
            relabelled = [tuple(perm[u] for u in t) for t in slots]
            degree = [sum(u in t for t in relabelled) for u in range(s.nu)]
            order = sorted(range(s.nu), key=lambda u: -degree[u])
            back = {u: i for i, u in enumerate(order)}
            normalized = [tuple(sorted(back[u] for u in t)) for t in relabelled]
            rng.shuffle(normalized)
            assert canonical_form(normalized, s.nu)[0] == base


def test_enumeration_is_reproducible():
    first = enumerate_stopping_sets(4, 4)
    enumerate_stopping_sets.cache_clear()
    second = enumerate_stopping_sets(4, 4)
    assert first is not second
    assert first == second


def test_catalog_json_round_trip(tmp_path):
    catalog = enumerate_stopping_sets(3, 8)
    path = tmp_path / "cat.json"
    catalog.save(path)
    assert StoppingSetCatalog.load(path) == catalog
    assert StoppingSet.from_dict(catalog.sets[0].to_dict()) == catalog.sets[0]


def test_load_or_enumerate_uses_cache(tmp_path):
    path = tmp_path / "cat.json"
    big = load_or_enumerate(3, 4, path)
    assert path.exists()
    small = load_or_enumerate(2, 3, path)
    assert small == enumerate_stopping_sets(3, 4).restricted(nu_max=2, degrees=range(2, 4))
    assert len(small) == len(enumerate_stopping_sets(2, 3))
    assert len(big) == len(enumerate_stopping_sets(3, 4))


@given(
    st.integers(10, 2000),
    st.floats(0.01, 1.0),
    st.floats(0.01, 0.9),
)
def test_elementary_closed_form(n, lam2, load):
    m = max(2, min(n, round(load * n)))
    dist = DegreeDistribution.from_mapping({2: lam2, 5: 1.0 - lam2}) if lam2 < 1.0 else DegreeDistribution.monomial(2)
    value = plr_degree(enumerate_stopping_sets(2, 2), dist, n, m, 2)
    assert value == pytest.approx((m - 1) * lam2 / math.comb(n, 2), rel=1e-12)


def test_elementary_example():
    dist = DegreeDistribution.from_mapping({2: 0.3, 3: 0.7})
    value = plr_degree(enumerate_stopping_sets(2, 2), dist, 100, 50, 2)
    assert value == pytest.approx(49 * 0.3 / 4950, rel=1e-12)
    assert value == pytest.approx(2.970e-3, abs=5e-7)


def test_sparse_limit():
    catalog = enumerate_stopping_sets(4, 8)
    n = 1_000_000
    value = plr_degree(catalog, DegreeDistribution.monomial(2), n, 5, 2)
    assert value == pytest.approx(4 / math.comb(n, 2), rel=1e-4)


def test_undefined_degree():
    with pytest.raises(UndefinedDegreeError):
        plr_degree(enumerate_stopping_sets(2, 2), DegreeDistribution.monomial(3), 100, 50, 2)


def test_sets_with_foreign_degrees_are_skipped():
    catalog = enumerate_stopping_sets(4, 8)
    only3 = plr_degree(catalog.restricted(degrees=[3]), DegreeDistribution.monomial(3), 100, 30, 3)
    assert plr_degree(catalog, DegreeDistribution.monomial(3), 100, 30, 3) == pytest.approx(only3, rel=1e-12)


def test_sets_larger_than_frame_contribute_nothing():
    catalog = enumerate_stopping_sets(4, 3)
    small = plr_degree(catalog, DegreeDistribution.monomial(2), 100, 3, 2)
    assert small == pytest.approx(plr_degree(catalog.restricted(nu_max=3), DegreeDistribution.monomial(2), 100, 3, 2))


def test_single_class_collapse():
    catalog = enumerate_stopping_sets(4, 8)
    dist = DegreeDistribution.from_mapping({2: 0.3, 3: 0.5, 8: 0.2})
    direct = sum(dist[l] * plr_degree(catalog, dist, 100, 40, l) for l in (2, 3, 8))
    assert plr_class(catalog, [ClassSpec(1.0, dist)], 100, 40, 0) == pytest.approx(direct, rel=1e-12)


def test_degree_eight_class_outside_small_catalog():
    catalog = enumerate_stopping_sets(4, 3)
    classes = [ClassSpec(0.5, DegreeDistribution.monomial(8)), ClassSpec(0.5, DegreeDistribution.monomial(2))]
    assert plr_class(catalog, classes, 100, 50, 0) == 0.0
    assert plr_class(catalog, classes, 100, 50, 1) > 0.0


@settings(max_examples=40)
@given(st.floats(0.05, 0.5), st.floats(0.05, 0.4), st.floats(0.001, 0.05), st.integers(5, 60))
def test_monotone_in_masses_and_users(lam2, lam3, delta, m):
    catalog = enumerate_stopping_sets(4, 3)
    base = DegreeDistribution.from_mapping({2: lam2, 3: lam3, 8: 1.0 - lam2 - lam3})
    more2 = DegreeDistribution.from_mapping({2: lam2 + delta, 3: lam3, 8: 1.0 - lam2 - lam3 - delta})
    more3 = DegreeDistribution.from_mapping({2: lam2, 3: lam3 + delta, 8: 1.0 - lam2 - lam3 - delta})
    for l in (2, 3):
        p = plr_degree(catalog, base, 100, m, l)
        assert plr_degree(catalog, more2, 100, m, l) >= p
        assert plr_degree(catalog, more3, 100, m, l) >= p
        assert plr_degree(catalog, base, 100, m + 1, l) >= p


def test_polynomial_matches_direct_evaluation():
    catalog = enumerate_stopping_sets(4, 8)
    row = table1_row("b3")
    classes = row.classes()
    poly = ErrorFloorPolynomial(catalog, 100, 50, (2, 3, 8))
    masses = [[c.dist[d] for d in (2, 3, 8)] for c in classes]
    got = poly.class_plrs(np.array(masses), np.array([c.alpha for c in classes]))
    for k in range(2):
        assert got[k] == pytest.approx(plr_class(catalog, classes, 100, 50, k), rel=1e-10)


def test_minimal_only_is_smaller():
    catalog = enumerate_stopping_sets(4, 8)
    classes = table1_row("b3").classes()
    for k in range(2):
        assert plr_class(catalog, classes, 100, 50, k, minimal_only=True) < plr_class(catalog, classes, 100, 50, k)


def test_table_row_prediction_class_order():
    catalog = enumerate_stopping_sets(4, 8)
    classes = table1_row("b3").classes()
    p1 = plr_class(catalog, classes, 100, 50, 0)
    p2 = plr_class(catalog, classes, 100, 50, 1)
    assert p1 <= 1e-5
    assert p1 < p2


@pytest.mark.xfail(
    strict=True,
    reason="with every connected set up to four users the class-2 prediction is 1.14e-3, just above 1e-3",
)
def test_table_row_prediction_meets_loose_target():
    catalog = enumerate_stopping_sets(4, 8)
    assert plr_class(catalog, table1_row("b3").classes(), 100, 50, 1) <= 1e-3


def test_prediction_matches_simulation_on_sparse_frames():
    classes = (
        ClassSpec(0.7, DegreeDistribution.monomial(2)),
        ClassSpec(0.3, DegreeDistribution.monomial(3)),
    )
    cfg = ScenarioConfig(15, 0.4, classes, seed=21)
    assert cfg.m == 6
    avg = average_distribution(classes)
    assert avg.to_mapping() == {"2": 0.7, "3": 0.3}
    simulated = run_monte_carlo(cfg, 10_000_000).per_class[0].plr
    predicted = plr_degree(enumerate_stopping_sets(4, 3), avg, 15, 6, 2)
    assert abs(simulated - predicted) / simulated <= 0.15
