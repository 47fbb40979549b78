"""Random instances shared by the property tests."""

from __future__ import annotations

import random

from mdae.expr import Expr, VarKey, monomial_decompose
from mdae.rescale import ConstraintRow, RescalingConstraints


def _monomial(rng: random.Random, pool: list[VarKey], max_vars: int = 2) -> Expr:
    e = Expr.eps(rng.choice([0, 0, 1, 2]))
    for v in rng.sample(pool, min(len(pool), rng.randint(0, max_vars))):
        e = e * Expr.var(v) ** rng.choice([1, 1, 2])
    return e


def random_constraints(rng: random.Random, max_vars: int = 6):
    """A constraint system whose matched variables occur plainly on their own side.

    Own monomials multiply the matched variable only by pinned variables, which
    keeps the feasible set closed under pointwise minimum.  Rest monomials are
    arbitrary products and may contain opaque factors.
    """
    n = rng.randint(2, max_vars)
    names = [VarKey(f"v{i}") for i in range(n)]
    pinned = frozenset(v for v in names if rng.random() < 0.25)
    rows = []
    for x in names:
        if x in pinned or rng.random() < 0.15:
            continue
        others = [v for v in names if v != x]
        fixed = [v for v in others if v in pinned]
        e = Expr()
        for _ in range(rng.randint(1, 2)):
            own = Expr.eps(rng.choice([0, 0, 1])) * Expr.var(x) ** rng.choice([1, 1, 2])
            if fixed and rng.random() < 0.3:
                own = own * Expr.var(rng.choice(fixed))
            e = e + own
        for _ in range(rng.randint(0, 3)):
            t = _monomial(rng, others)
            if others and rng.random() < 0.15:
                args = rng.sample(others, rng.randint(1, min(2, len(others))))
                t = t * Expr.apply("g", [Expr.var(a) for a in args])
            e = e + t
        rows.append(ConstraintRow(f"r{x.base}", x, monomial_decompose(e).terms))
    return RescalingConstraints(tuple(rows), pinned), names


def oracle_rows(c: RescalingConstraints):
    """The same constraints in the plain tuple form the grid oracle reads."""
    out = []
    for row in c.rows:
        own, rest = row.splits()
        conv = [[(t.n, t.vars, [a.variables for a, _ in t.opaque]) for t in side]
                for side in (own, rest)]
        out.append((row.var, conv[0], conv[1]))
    return out


def random_expr(rng: random.Random, pool: list[VarKey], positive: bool = True,
                max_terms: int = 3) -> Expr:
    e = Expr()
    for _ in range(rng.randint(1, max_terms)):
        coeff = rng.randint(1, 5) if positive else rng.choice([-3, -1, 1, 2])
        e = e + _monomial(rng, pool, 3) * coeff
    return e if not e.is_zero else Expr.var(pool[0])


def random_offsets(rng: random.Random, pool: list[VarKey]) -> dict[VarKey, int]:
    return {v: rng.randint(0, 3) for v in pool}


def random_graph(rng: random.Random, max_side: int = 6):
    """Random bipartite incidence with up to ``max_side`` vertices per side."""
    ne, nv = rng.randint(0, max_side), rng.randint(0, max_side)
    eqs = [f"f{i}" for i in range(ne)]
    xs = [f"x{j}" for j in range(nv)]
    p = rng.uniform(0.1, 0.6)
    edges = [(f, x) for f in eqs for x in xs if rng.random() < p]
    return eqs, xs, edges
