from __future__ import annotations

import math
import random

import numpy as np
import pytest

from mdae.errors import InfiniteOffset
from mdae.expr import Expr, VarKey
from mdae.mcarray import build_array, canonical_matching
from mdae.rescale import (DBM, INF, RescalingConstraints, build_rescaling_system, check_goodness,
                          difference_form_offsets, expr_offset, leading_part, representative,
                          rescale_expr, solve_min_offsets)

from generators import oracle_rows, random_constraints, random_expr, random_offsets
from oracles import BIG, feasible_mask, grid_least_offsets

V = VarKey


def solved(mc, K=None):
    a = build_array(mc, K)
    m = canonical_matching(a).matching
    c = build_rescaling_system(a, m)
    return a, m, c, solve_min_offsets(c)


@pytest.fixture(scope="module")
def cup(load):
    return load("cup_and_ball").mode_change("free", "straight")


def test_cup_offsets(cup):
    a, m, c, off = solved(cup)
    raised = {v: x for v, x in off.var.items() if x}
    assert raised == {V("x", 2): 1, V("y", 2): 1, V("lambda"): 1}
    assert off.slack == []
    dbm = difference_form_offsets(c)
    assert dbm is not None
    assert {v: x for v, x in dbm.items() if x} == raised
    sol = check_goodness(a, m, off)
    assert sol.good


def test_euler_row_of_cup(cup):
    a, m, c, _ = solved(cup)
    (row,) = [r for r in c.rows if r.eq == "E[der(y,2),shift(der(y),1)]"]
    assert row.var == V("y", 2)
    own, rest = row.splits()
    assert [t.to_expr() for t in own] == [Expr.var("y", 2)]
    assert sorted(t.n for t in rest) == [1, 1]
    assert {v for t in rest for v in t.variables} == {V("y", 1), V("y", 1, 1)}


def test_product_row_at_height_two(cup):
    a, m, c, off = solved(cup, 2)
    (row,) = [r for r in c.rows if r.eq == "k1''@2"]
    assert row.var == V("y", 2, 2)
    muls = sorted(max(e for _, e in t.vars) for t in row.terms)
    assert muls == [1, 1, 2, 2]       # x*xdd, y*ydd, xd^2, yd^2
    sol = check_goodness(a, m, off)
    assert not sol.renamable
    assert sorted(map(str, sol.witnesses["renamable"])) == ["shift(der(x,2),1)", "shift(der(y,2),1)"]
    assert off[V("x", 2, 1)] == off[V("y", 2, 1)] == 2


def test_opaque_factors_force_infinity(load):
    mc = load("clutch_nl_torque").mode_change("released", "engaged")
    a, m, c, off = solved(mc)
    assert off.eq["e1"] == INF and off[V("t1")] == INF
    sol = check_goodness(a, m, off)
    assert not sol.rescalable
    assert off.chain(V("t1"))


def test_empty_system():
    off = solve_min_offsets(RescalingConstraints((), frozenset()))
    assert off.var == {} and off.eq == {}


def test_goodness_vacuous_when_all_zero(load):
    mc = load("clutch").mode_change("engaged", "released")
    a, m, c, off = solved(mc)
    assert all(x == 0 for x in off.var.values())
    assert check_goodness(a, m, off).good


def test_representative():
    assert representative(V("x", 2, 1), 2) == V("x", 0, 3)
    assert representative(V("x", 2, 0), 1) == V("x", 1, 1)
    assert representative(V("lambda"), 3) == V("lambda")


def test_dbm_closure():
    d = DBM(["a", "b", "c"])
    d.add_lower("a", "b", 1)       # a >= b + 1
    d.add_lower("b", "0", 2)       # b >= 2
    d.close()
    assert d.feasible
    assert d.least_solution() == {"a": 3, "b": 2, "c": 0}
    before = {k: dict(v) for k, v in d.D.items()}
    d.close()
    assert d.D == before
    cyc = DBM(["a", "b"])
    cyc.add_lower("a", "b", 1)
    cyc.add_lower("b", "a", 0)
    cyc.close()
    assert not cyc.feasible
    assert cyc.least_solution() == {"a": INF, "b": INF}


def _as_grid(values, names):
    return np.array([[BIG if values[v] == INF else values[v] for v in names]], dtype=float)


def test_least_offsets_match_grid_oracle():
    rng = random.Random(2024)
    compared = 0
    for _ in range(80):
        c, names = random_constraints(rng)
        got = {v: solve_min_offsets(c).var.get(v, 0) for v in names}
        rows = oracle_rows(c)
        assert feasible_mask(rows, c.pinned, names, _as_grid(got, names))[0]
        # decrementing any finite raised offset breaks feasibility
        for v in names:
            if got[v] not in (0, INF):
                lower = {**got, v: got[v] - 1}
                assert not feasible_mask(rows, c.pinned, names, _as_grid(lower, names))[0]
        if all(x == INF or x <= 4 for x in got.values()):
            assert grid_least_offsets(rows, c.pinned, names) == got
            compared += 1
    assert compared >= 70


def test_mu_is_a_homomorphism():
    rng = random.Random(8)
    pool = [V("x"), V("y", 1), V("z", 0, 1), V("w", 2)]
    for _ in range(200):
        f, g = random_expr(rng, pool), random_expr(rng, pool)
        mu = random_offsets(rng, pool)
        assert expr_offset(f * g, mu) == expr_offset(f, mu) + expr_offset(g, mu)
        assert expr_offset(f + g, mu) == max(expr_offset(f, mu), expr_offset(g, mu))


def test_rescaled_expression_has_offset_zero():
    rng = random.Random(4)
    pool = [V("x"), V("y", 1), V("z", 0, 1)]
    for _ in range(200):
        f = random_expr(rng, pool, positive=False)
        mu = random_offsets(rng, pool)
        r = rescale_expr(f, mu)
        assert expr_offset(r, {}) == 0
        assert min(r.eps_exponents()) >= 0
        # rescaling an already rescaled expression changes nothing
        assert rescale_expr(r, {}) == r
        assert expr_offset(leading_part(r), {}) == 0


def test_rescale_refuses_infinite_offsets():
    e = Expr.apply("g", [Expr.var("x")]) + Expr.var("y")
    with pytest.raises(InfiniteOffset):
        rescale_expr(e, {V("x"): 1})
    assert expr_offset(e, {V("x"): 1}) == math.inf
