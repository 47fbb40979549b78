"""Rescaling offsets and goodness of a matched mode-change array.

Each variable ``x`` gets an integer offset ``mu_x``: it behaves like
``eps**-mu_x`` near the switch.  The offset of a monomial is its explicit
``eps**-n`` order plus the offsets of its variable factors (counted with
multiplicity); an opaque factor scores 0 when all its arguments have offset
0 and infinity otherwise.  An equation's offset is the maximum over its
monomials.

For each matched pair ``(f, x_f)`` the monomials containing ``x_f`` must
reach the offset of the whole equation.  The least offsets satisfying all
these constraints are computed by a Kleene iteration from zero.  Past
variables, inputs and tail variables are pinned to zero: the former are
ordinary finite left limits, the latter are the restart states, which must
not be impulsive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .expr import Expr, Term, VarKey, monomial_decompose
from .graph import Matching
from .mcarray import ModeChangeArray
from .errors import InfiniteOffset

INF = math.inf


# ----------------------------------------------------------------------
# scoring


def term_offset(t: Term, mu: Mapping[VarKey, float]) -> float:
    total = t.n
    for v, e in t.vars:
        total += e * mu.get(v, 0)
    for a, _ in t.opaque:
        if any(mu.get(v, 0) for v in a.variables):
            return INF
    return total


def expr_offset(e: Expr, mu: Mapping[VarKey, float]) -> float:
    """Offset of ``e``; the zero expression scores 0."""
    terms = monomial_decompose(e).terms
    return max((term_offset(t, mu) for t in terms), default=0)


def rescale_expr(e: Expr, mu: Mapping[VarKey, float]) -> Expr:
    """``eps**mu(e) * e`` with every impulsive ``x`` replaced by ``eps**-mu_x * scaled(x)``.

    The result has offset 0 when scaled variables are scored 0.
    """
    mu_e = expr_offset(e, mu)
    if mu_e == INF:
        raise InfiniteOffset(f"expression {e} has infinite offset")

    def sub(v: VarKey):
        n = mu.get(v, 0)
        if n == 0:
            return None
        if n == INF:
            raise InfiniteOffset(f"variable {v} has infinite offset")
        return Expr.eps(int(n)) * Expr.var(v.with_tag("r"))

    return e.substitute(sub) * Expr.eps_pow(int(mu_e))


def leading_part(e: Expr) -> Expr:
    """Set eps to zero in an expression with no negative eps powers."""
    return Expr({k: c for k, c in e.items() if k[0] <= 0})


# ----------------------------------------------------------------------
# constraint system


@dataclass(frozen=True)
class ConstraintRow:
    eq: str
    var: VarKey
    terms: tuple[Term, ...]

    def splits(self) -> tuple[list[Term], list[Term]]:
        own = [t for t in self.terms if t.contains(self.var)]
        rest = [t for t in self.terms if not t.contains(self.var)]
        return own, rest

    def describe(self, mu: Mapping[VarKey, float]) -> str:
        own, rest = self.splits()

        def side(ts):
            parts = []
            for t in ts:
                bits = [str(t.n)] if t.n else []
                bits += [(f"{e}*" if e > 1 else "") + f"mu({v})" for v, e in t.vars]
                bits += ["opaque(" + ",".join(sorted(str(v) for v in a.variables)) + ")"
                         for a, _ in t.opaque]
                parts.append("+".join(bits) or "0")
            return "max(" + ", ".join(parts) + ")"

        return f"{side(own)} >= {side(rest)}"


@dataclass(frozen=True)
class RescalingConstraints:
    rows: tuple[ConstraintRow, ...]
    pinned: frozenset[VarKey]

    @property
    def variables(self) -> tuple[VarKey, ...]:
        seen: dict = {}
        for r in self.rows:
            seen[r.var] = None
            for t in r.terms:
                for v in sorted(t.variables):
                    seen[v] = None
        return tuple(seen)

    @property
    def free(self) -> tuple[VarKey, ...]:
        return tuple(v for v in self.variables if v not in self.pinned)


def build_rescaling_system(a: ModeChangeArray, m: Matching) -> RescalingConstraints:
    rows = []
    for eid in a.ids:
        if eid in m.eq_to_var:
            rows.append(ConstraintRow(eid, m.eq_to_var[eid], monomial_decompose(a[eid].expr).terms))
    pinned = set(a.past) | set(a.tail_variables)
    for r in rows:
        for t in r.terms:
            pinned |= {v for v in t.variables if v.base in a.mc.inputs}
    return RescalingConstraints(tuple(rows), frozenset(pinned))


# ----------------------------------------------------------------------
# least offsets


@dataclass
class Offsets:
    var: dict[VarKey, float]
    eq: dict[str, float]
    reasons: dict[VarKey, list[str]] = field(default_factory=dict)
    slack: list[str] = field(default_factory=list)   # rows whose matched side falls short

    def __getitem__(self, v: VarKey) -> float:
        return self.var.get(v, 0)

    def chain(self, v: VarKey) -> list[str]:
        """Forcing chain explaining the offset of ``v``, most recent cause first."""
        return list(reversed(self.reasons.get(v, [])))


def _requirement(row: ConstraintRow, mu: dict, own: list[Term], target: float) -> float:
    x = row.var
    best = INF
    plain = False
    for t in own:
        if x in t.opaque_variables:
            continue
        plain = True
        mult = t.multiplicity(x)
        rest = term_offset(t, {**mu, x: 0})
        if target == INF or rest == INF:
            need = INF
        else:
            need = max(0, -(-(target - rest) // mult))
        best = min(best, need)
    return best if plain else INF


def solve_min_offsets(c: RescalingConstraints) -> Offsets:
    mu: dict[VarKey, float] = {v: 0 for v in c.variables}
    reasons: dict[VarKey, list[str]] = {}
    splits = [(r, *r.splits()) for r in c.rows]
    limit = 2 * len(c.variables) + 5
    passes = 0
    while True:
        changed = set()
        for row, own, rest in splits:
            x = row.var
            if x in c.pinned or mu[x] == INF:
                continue
            target = max((term_offset(t, mu) for t in rest), default=-INF)
            if max((term_offset(t, mu) for t in own), default=-INF) >= target:
                continue
            need = _requirement(row, mu, own, target)
            if need > mu[x]:
                mu[x] = need
                changed.add(x)
                culprit = max(rest, key=lambda t: term_offset(t, mu))
                shown = "inf" if need == INF else str(int(need))
                reasons.setdefault(x, []).append(
                    f"mu({x}) >= {shown} from {row.eq}: term {culprit.to_expr()} "
                    f"has offset {term_offset(culprit, mu)}")
        if not changed:
            break
        passes += 1
        if passes > limit:
            # a positive cycle: whatever still moves grows without bound
            for x in changed:
                mu[x] = INF
                reasons.setdefault(x, []).append(f"mu({x}) unbounded (positive cycle)")
            passes = 0
    eq = {row.eq: max((term_offset(t, mu) for t in row.terms), default=0) for row in c.rows}
    slack = [row.eq for row, own, _ in splits
             if max((term_offset(t, mu) for t in own), default=-INF) < eq[row.eq]]
    return Offsets(mu, eq, reasons, slack)


# ----------------------------------------------------------------------
# difference-bound matrices


class DBM:
    """Difference bounds ``mu_x - mu_y <= D[x][y]`` closed by Floyd-Warshall."""

    ZERO = "0"

    def __init__(self, nodes: Iterable):
        self.nodes = [self.ZERO] + [n for n in dict.fromkeys(nodes) if n != self.ZERO]
        self.D = {x: {y: (0 if x == y else INF) for y in self.nodes} for x in self.nodes}
        for x in self.nodes[1:]:
            self.D[self.ZERO][x] = 0      # mu_x >= 0

    def add_upper(self, x, y, c: float) -> None:
        if c < self.D[x][y]:
            self.D[x][y] = c

    def add_lower(self, x, y, w: float) -> None:
        """Record ``mu_x >= mu_y + w``."""
        self.add_upper(y, x, -w)

    def close(self) -> "DBM":
        D, ns = self.D, self.nodes
        for k in ns:
            Dk = D[k]
            for i in ns:
                dik = D[i][k]
                if dik == INF:
                    continue
                Di = D[i]
                for j in ns:
                    v = dik + Dk[j]
                    if v < Di[j]:
                        Di[j] = v
        return self

    @property
    def feasible(self) -> bool:
        return all(self.D[n][n] >= 0 for n in self.nodes)

    def least_solution(self) -> dict:
        """Least nonnegative solution; nodes on a negative cycle get infinity."""
        bad = {n for n in self.nodes if self.D[n][n] < 0}
        out = {}
        for x in self.nodes[1:]:
            if x in bad or any(self.D[b][x] < INF and self.D[self.ZERO][b] < INF for b in bad):
                out[x] = INF
            else:
                out[x] = max(0, -self.D[self.ZERO][x])
        return out


def difference_form_offsets(c: RescalingConstraints) -> dict | None:
    """Solve ``c`` through a DBM when every row is a difference constraint.

    That is the case when the matched variable occurs in a single monomial,
    linearly and outside opaque factors, and every other monomial has at
    most one free variable, linearly.  Returns ``None`` otherwise.
    """
    dbm = DBM(c.free)
    for row in c.rows:
        own, rest = row.splits()
        if len(own) != 1 or row.var in own[0].opaque_variables or own[0].multiplicity(row.var) != 1:
            return None
        if any(v not in c.pinned for v in own[0].variables if v != row.var):
            return None
        base = own[0].n
        if row.var in c.pinned:
            continue
        for t in rest:
            free = [v for v in t.variables if v not in c.pinned]
            if any(v in t.opaque_variables for v in free) or len(free) > 1:
                return None
            if free and t.multiplicity(free[0]) != 1:
                return None
            w = t.n - base
            if free:
                dbm.add_lower(row.var, free[0], w)
            else:
                dbm.add_lower(row.var, DBM.ZERO, w)
        for v in c.pinned:
            if v in dbm.D:
                dbm.add_upper(v, DBM.ZERO, 0)
    return dbm.close().least_solution()


# ----------------------------------------------------------------------
# goodness


@dataclass
class RescalingSolution:
    heights: dict[str, int]
    matching: Matching
    offsets: Offsets
    rescalable: bool
    non_impulsive: bool
    renamable: bool
    witnesses: dict[str, list]
    slack: list[str]

    @property
    def good(self) -> bool:
        return self.rescalable and self.non_impulsive and self.renamable

    @property
    def var(self) -> dict[VarKey, float]:
        return self.offsets.var

    @property
    def eq(self) -> dict[str, float]:
        return self.offsets.eq

    def to_json(self) -> dict:
        def num(v):
            return "inf" if v == INF else int(v)
        return {
            "variables": {str(v): num(x) for v, x in sorted(self.var.items(), key=lambda kv: kv[0].sort_key)},
            "equations": {k: num(x) for k, x in self.eq.items()},
            "goodness": {"rescalable": self.rescalable, "non_impulsive": self.non_impulsive,
                         "renamable": self.renamable},
            "witnesses": {k: [str(w) for w in ws] for k, ws in self.witnesses.items()},
            "slack": list(self.slack),
        }


def representative(v: VarKey, mu: float) -> VarKey:
    """``(y, m-n, k+n)`` with ``n = min(mu, m)``: where an impulsive head is renamed."""
    n = v.m if mu == INF else min(int(mu), v.m)
    return VarKey(v.base, v.m - n, v.k + n, v.tag)


def check_goodness(a: ModeChangeArray, m: Matching, offsets: Offsets) -> RescalingSolution:
    in_array = set(a.variables)
    w_resc = [eid for eid, x in offsets.eq.items() if x == INF]
    w_tail = [v for v in sorted(a.tail_variables) if offsets[v] != 0]
    w_rename = [v for v in a.dependents
                if v not in a.tail_variables and representative(v, offsets[v]) not in in_array]
    return RescalingSolution(dict(a.heights), m, offsets, not w_resc, not w_tail, not w_rename,
                             {"rescalable": w_resc, "non_impulsive": w_tail, "renamable": w_rename},
                             list(offsets.slack))
