import random

import pytest

from mdae.graph import (BipartiteGraph, Matching, dm_decompose, is_structurally_nonsingular,
                        max_matching, quotient_graph)

from generators import random_graph
from oracles import dm_oracle, matching_number


def test_diagonal_is_perfect():
    g = BipartiteGraph("abc", "xyz", [("a", "x"), ("b", "y"), ("c", "z")])
    m = max_matching(g)
    assert len(m) == 3 and m.is_perfect(g)
    dm = dm_decompose(g)
    assert dm.is_regular


def test_cup_and_ball_leading_system():
    g = BipartiteGraph(["e1", "e2", "k1''"], ["xdd", "ydd", "lam"],
                       [("e1", "xdd"), ("e1", "lam"), ("e2", "ydd"), ("e2", "lam"),
                        ("k1''", "xdd"), ("k1''", "ydd")])
    m = max_matching(g)
    assert len(m) == 3 and m.is_valid_for(g)
    assert is_structurally_nonsingular(g)


def test_matching_rejects_bad_pairs():
    with pytest.raises(ValueError):
        Matching((("a", "x"), ("b", "x")))


def test_initial_matching_is_extended():
    g = BipartiteGraph("ab", "xy", [("a", "x"), ("a", "y"), ("b", "x")])
    m = max_matching(g, Matching((("a", "x"),)))
    assert len(m) == 2 and m.eq_to_var == {"a": "y", "b": "x"}


def test_random_graphs_against_oracles():
    rng = random.Random(11)
    for _ in range(200):
        eqs, xs, edges = random_graph(rng)
        g = BipartiteGraph(eqs, xs, edges)
        m = max_matching(g)
        assert m.is_valid_for(g)
        assert len(m) == matching_number(eqs, xs, edges)
        dm = dm_decompose(g)
        want = dm_oracle(eqs, xs, edges)
        assert (set(dm.over_equations), set(dm.over_variables)) == want["over"]
        assert (set(dm.regular_equations), set(dm.regular_variables)) == want["regular"]
        assert (set(dm.under_equations), set(dm.under_variables)) == want["under"]
        # the regular block always has a perfect matching
        sub = g.subgraph(dm.regular_equations, dm.regular_variables)
        assert len(max_matching(sub)) == len(dm.regular_equations) == len(dm.regular_variables)
        assert is_structurally_nonsingular(g) == (
            len(eqs) == len(xs) and not dm.over_equations and not dm.under_variables)


def test_dm_invariant_under_edge_order():
    rng = random.Random(5)
    for _ in range(50):
        eqs, xs, edges = random_graph(rng)
        a = dm_decompose(BipartiteGraph(eqs, xs, edges))
        shuffled = edges[:]
        rng.shuffle(shuffled)
        b = dm_decompose(BipartiteGraph(eqs, xs, shuffled))
        assert a.to_json() == b.to_json()


def test_cardinality_invariant_under_vertex_order():
    rng = random.Random(9)
    for _ in range(50):
        eqs, xs, edges = random_graph(rng)
        n = len(max_matching(BipartiteGraph(eqs, xs, edges)))
        assert len(max_matching(BipartiteGraph(eqs[::-1], xs[::-1], edges))) == n


def test_quotient_merges_classes():
    eqs = ["f1", "f2", "f3"]
    xs = [("x", 2, 0), ("x", 1, 1), ("x", 0, 2)]
    edges = list(zip(eqs, xs))
    q, classes = quotient_graph(eqs, xs, edges, key=lambda v: (v[0], v[1] + v[2]))
    assert q.variables == [("x", 2)]
    assert sorted(q.incident(("x", 2))) == eqs
    assert classes[("x", 2)] == xs
