"""Mode-change arrays.

A mode change stacks shifted copies of the new mode's completion at the
instants ``t*, t*+eps, ..., t*+K*eps``.  Variables whose value is already
fixed by the previous mode are *past*; everything else is *dependent*.  The
array is closed under Euler identities linking variables that denote the
same derivative at different instants, facts implied by the zero-crossing
are dropped, and the equations are split into enabled and disabled ones.

The module also builds the canonical matching of the closed array: the
index-reduction matching replicated at every instant, adjusted so that
each tail consistency equation is matched, and lifted along the Euler
identities.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Mapping

from .errors import NoAdmissibleMatching, NotRelated
from .expr import Expr, VarKey, equal_up_to_constant, shift
from .graph import BipartiteGraph, Matching, dm_decompose, max_matching
from .sigma import (CompletedSystem, DAESystem, SigmaOffsets, complete, eq_name,
                    solve_sigma)


# ----------------------------------------------------------------------
# mode changes


@dataclass(frozen=True)
class ModeChange:
    """Previous mode, new mode and the optional zero-crossing that links them."""

    previous: DAESystem
    new: DAESystem
    zero_crossing: Expr | None = None
    facts: tuple[Expr, ...] = ()
    name: str = ""
    prev_offsets: SigmaOffsets = field(init=False, repr=False)
    prev_completed: CompletedSystem = field(init=False, repr=False)
    offsets: SigmaOffsets = field(init=False, repr=False)
    completed: CompletedSystem = field(init=False, repr=False)

    def __post_init__(self):
        po = solve_sigma(self.previous)
        no = solve_sigma(self.new)
        object.__setattr__(self, "prev_offsets", po)
        object.__setattr__(self, "prev_completed", complete(self.previous, po))
        object.__setattr__(self, "offsets", no)
        object.__setattr__(self, "completed", complete(self.new, no))
        if self.zero_crossing is not None:
            known = set(self.previous.variables) | set(self.previous.inputs)
            stray = sorted(str(v) for v in self.zero_crossing.variables
                           if v.base not in known or v.tag or v.k)
            if stray:
                raise ValueError("zero-crossing uses variables outside the previous mode: "
                                 + ", ".join(stray))

    @property
    def exogenous(self) -> bool:
        return self.zero_crossing is None and not self.facts

    @property
    def inputs(self) -> frozenset[str]:
        return frozenset(self.new.inputs) | frozenset(self.previous.inputs)

    def is_past(self, v: VarKey) -> bool:
        """Past-variable test on a single array variable.

        ``v`` is past when some negative shift of a previous-mode variable
        denotes the same derivative, i.e. its total degree is below the
        previous-mode offset of its base.  Inputs are always known.
        """
        if v.base in self.inputs:
            return True
        d = self.prev_offsets.d.get(v.base)
        return d is not None and v.total_degree < d

    def leading_var(self, f: str) -> str:
        return self.offsets.matched_var(f)

    def restart_states(self) -> list[VarKey]:
        return [VarKey(x, m) for x in self.new.variables for m in range(self.offsets.d[x])]


def past_variables(mc: ModeChange, variables: Iterable[VarKey]) -> frozenset[VarKey]:
    return frozenset(v for v in variables if mc.is_past(v))


# ----------------------------------------------------------------------
# Euler identities and closure


def euler_identity(x: VarKey, z: VarKey) -> Expr:
    """``x - eps**-n * sum_i C(n,i) (-1)**i shift(z, -i)`` with ``n = m_x - m_z``."""
    if not x.related(z) or x.m <= z.m:
        raise NotRelated(f"{x} and {z} are not related by an Euler identity")
    n = x.m - z.m
    body = Expr()
    for i in range(n + 1):
        body = body + Expr.var(z.shifted(-i)) * ((-1) ** i * comb(n, i))
    return Expr.var(x) - Expr.eps(n) * body


def euler_id(x: VarKey, z: VarKey) -> str:
    return f"E[{x},{z}]"


def _class_key(v: VarKey) -> tuple:
    return (v.base, v.tag, v.total_degree)


def sim_closure(variables: Iterable[VarKey], eligible=lambda v: True
                ) -> tuple[list[tuple[VarKey, VarKey]], frozenset[VarKey]]:
    """Close a variable set under Euler identities.

    Related variables are grouped into classes (same base, same total
    degree).  Each class is linked as a star around its member with the
    fewest derivatives, which is the only identity set that keeps one
    identity per non-center member.  Expanding an identity only introduces
    variables of strictly smaller total degree, so classes are processed
    from the highest degree down and the result is independent of the
    order in which ``variables`` is given.

    Returns the identity pairs ``(x, z)`` and the closed variable set.
    """
    pool = set(variables)
    pairs: list[tuple[VarKey, VarKey]] = []
    done: set = set()
    while True:
        classes: dict = {}
        for v in pool:
            if eligible(v):
                classes.setdefault(_class_key(v), []).append(v)
        todo = [k for k in classes if k not in done]
        if not todo:
            break
        key = max(todo, key=lambda k: (k[2], k[0], k[1]))
        done.add(key)
        members = sorted(classes[key], key=lambda v: v.m)
        center = members[0]
        for x in members[1:]:
            pairs.append((x, center))
            for i in range(x.m - center.m + 1):
                pool.add(center.shifted(-i))
    pairs.sort(key=lambda p: (p[0].base, -p[0].total_degree, p[0].m))
    return pairs, frozenset(pool)


# ----------------------------------------------------------------------
# facts and heights


def _is_fact(mc: ModeChange, f: str, m: int, k: int) -> bool:
    roots = ([mc.zero_crossing] if mc.zero_crossing is not None else []) + list(mc.facts)
    if not roots:
        return False
    e = mc.completed.derivatives[(f, m)]
    if not any(equal_up_to_constant(e, r) is not None for r in roots):
        return False
    return all(mc.is_past(v) for v in shift(e, k).variables)


def detect_facts(mc: ModeChange, K: Mapping[str, int]) -> list[tuple[str, int, int]]:
    out = []
    for f in mc.new.labels:
        for m in range(mc.offsets.c[f] + 1):
            for k in range(K[f] + 1):
                if _is_fact(mc, f, m, k):
                    out.append((f, m, k))
    return out


@dataclass(frozen=True)
class HeightBounds:
    lower: dict[str, int]   # K_* per equation label
    upper: dict[str, int]   # K^* per equation label
    capped: tuple[str, ...] = ()   # labels whose search hit the limit


def _tail_candidates(mc: ModeChange, f: str, m: int, K: int) -> set[VarKey]:
    g = shift(mc.completed.derivatives[(f, m)], K)
    d = mc.offsets.d
    out = set()
    for v in g.variables:
        if v.base in d and not v.tag and v.k == K and 0 <= v.m + K - d[v.base] <= K:
            out.add(v)
    return out


def _height_ok(mc: ModeChange, labels: list[str], K: int, strict: bool) -> bool:
    c = mc.offsets.c
    for f in labels:
        need = max((c[f] - m for m in range(c[f] + 1) if not _is_fact(mc, f, m, K)), default=0)
        if K < need:
            return False
        for m in range(c[f]):
            if _is_fact(mc, f, m, K):
                continue
            cand = _tail_candidates(mc, f, m, K)
            past = {v for v in cand if mc.is_past(v)}
            if strict and past:
                return False
            if not strict and not (cand - past):
                return False
    return True


def compute_height_bounds(mc: ModeChange) -> HeightBounds:
    """Smallest heights K_* and K^*, constant on each connected component."""
    c, d = mc.offsets.c, mc.offsets.d
    limit = max(c.values(), default=0) + max(d.values(), default=0) + 2
    lower, upper, capped = {}, {}, []
    for labels, _ in mc.new.components():
        if not labels:
            continue
        for strict, out in ((False, lower), (True, upper)):
            K = next((K for K in range(limit + 1) if _height_ok(mc, labels, K, strict)), None)
            if K is None:
                K = limit
                capped.extend(labels)
            for f in labels:
                out[f] = K
    return HeightBounds(lower, upper, tuple(dict.fromkeys(capped)))


# ----------------------------------------------------------------------
# the array


@dataclass(frozen=True)
class ArrayEquation:
    id: str
    expr: Expr
    label: str | None = None          # model label; None for Euler identities
    m: int = 0
    k: int = 0
    euler: tuple[VarKey, VarKey] | None = None

    @property
    def is_euler(self) -> bool:
        return self.euler is not None


@dataclass(frozen=True)
class ModeChangeArray:
    mc: ModeChange
    heights: dict[str, int]
    equations: tuple[ArrayEquation, ...]
    facts: tuple[ArrayEquation, ...]
    variables: tuple[VarKey, ...]
    past: frozenset[VarKey]
    dependents: tuple[VarKey, ...]
    tail_equations: frozenset[str]
    tail_variables: frozenset[VarKey]
    enabled: frozenset[str]
    disabled: frozenset[str]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {e.id: e for e in self.equations})

    def __getitem__(self, eq_id: str) -> ArrayEquation:
        return self._by_id[eq_id]

    def __contains__(self, eq_id: str) -> bool:
        return eq_id in self._by_id

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.equations]

    @property
    def euler_ids(self) -> list[str]:
        return [e.id for e in self.equations if e.is_euler]

    def height_of(self, base: str) -> int:
        return self.heights.get(self.mc.offsets.matched_eq(base), 0)

    def graph(self, equations: Iterable[str] | None = None) -> BipartiteGraph:
        """Incidence between array equations and dependent variables."""
        ids = self.ids if equations is None else list(equations)
        dep = set(self.dependents)
        edges = [(i, v) for i in ids for v in sorted(self._by_id[i].expr.variables) if v in dep]
        return BipartiteGraph(ids, self.dependents, edges)


def _var_order(mc: ModeChange):
    order = {b: i for i, b in enumerate(list(mc.new.variables) + sorted(mc.inputs))}
    return lambda v: (order.get(v.base, len(order)), v.base, v.m, v.k)


def build_array(mc: ModeChange, K: int | Mapping[str, int] | None = None) -> ModeChangeArray:
    if K is None:
        heights = dict(compute_height_bounds(mc).upper)
    elif isinstance(K, int):
        heights = {f: K for f in mc.new.labels}
    else:
        heights = {f: int(K[f]) for f in mc.new.labels}

    c = mc.offsets.c
    derivs = mc.completed.derivatives
    rows, facts = [], []
    for k in range(max(heights.values(), default=0) + 1):
        for f in mc.new.labels:
            if k > heights[f]:
                continue
            for m in range(c[f] + 1):
                row = ArrayEquation(eq_name(f, m, k), shift(derivs[(f, m)], k), f, m, k)
                (facts if _is_fact(mc, f, m, k) else rows).append(row)

    occurring = set()
    for r in rows:
        occurring |= {v for v in r.expr.variables if not v.tag}
    d = mc.offsets.d
    tails = set()
    for x in mc.new.variables:
        Kx = heights.get(mc.offsets.matched_eq(x), 0)
        tails |= {VarKey(x, dd, Kx) for dd in range(d[x] + 1)}
    pairs, closed = sim_closure(occurring | tails, lambda v: not mc.is_past(v))
    for x, z in pairs:
        rows.append(ArrayEquation(euler_id(x, z), euler_identity(x, z), euler=(x, z)))

    variables = tuple(sorted(closed, key=_var_order(mc)))
    past = past_variables(mc, variables)
    dependents = tuple(v for v in variables if v not in past)

    tail_eqs = frozenset(r.id for r in rows if r.label is not None and r.k == heights[r.label])
    prev = list(mc.prev_completed.derivatives.values())
    invariant = {r.id for r in rows if r.label is not None and any(
        equal_up_to_constant(derivs[(r.label, r.m)], p) is not None for p in prev)}
    enabled = tail_eqs | invariant
    disabled = frozenset(r.id for r in rows if r.label is not None and r.id not in enabled)
    return ModeChangeArray(mc, heights, tuple(rows), tuple(facts), variables, past,
                           dependents, tail_eqs, frozenset(tails), frozenset(enabled), disabled)


# ----------------------------------------------------------------------
# canonical matching


@dataclass(frozen=True)
class CanonicalMatching:
    matching: Matching
    source: str                       # "canonical" or "repaired"
    unmatched: tuple[str, ...]

    def __iter__(self):
        return iter(self.matching.pairs)


def _euler_trees(a: ModeChangeArray) -> dict:
    adj: dict = {}
    for e in a.equations:
        if e.is_euler:
            x, z = e.euler
            adj.setdefault(x, []).append((e.id, z))
            adj.setdefault(z, []).append((e.id, x))
    return adj


def canonical_matching(a: ModeChangeArray) -> CanonicalMatching:
    """Replicated index-reduction matching, exchanged at the tail and lifted.

    1. every leading equation ``(f, c_f, k)`` takes ``(x_f, d_x, k)``;
    2. at instant 0 each consistency equation takes the matching derivative
       of ``x_f`` when that variable is dependent and still unclaimed;
    3. each tail consistency equation takes over the class of its natural
       partner, releasing whatever equation held that class before;
    4. the Euler identities of each class are matched along the identity
       tree starting from the seeded member.

    If the result does not cover every enabled equation and dependent
    variable, it is completed by augmenting paths and marked "repaired".
    """
    mc = a.mc
    c, d = mc.offsets.c, mc.offsets.d
    dep = set(a.dependents)
    seeds: dict = {}   # class key -> (eq id, var)

    for f in mc.new.labels:
        x = mc.leading_var(f)
        for k in range(a.heights[f] + 1):
            eid, v = eq_name(f, c[f], k), VarKey(x, d[x], k)
            if eid in a and v in dep and _class_key(v) not in seeds:
                seeds[_class_key(v)] = (eid, v)
    for f in mc.new.labels:
        x = mc.leading_var(f)
        for m in range(c[f]):
            eid, v = eq_name(f, m), VarKey(x, d[x] - c[f] + m)
            if eid in a and v in dep and _class_key(v) not in seeds:
                seeds[_class_key(v)] = (eid, v)
    for f in mc.new.labels:
        x, K = mc.leading_var(f), a.heights[f]
        for m in range(c[f]):
            eid = eq_name(f, m, K)
            u = VarKey(x, d[x] - c[f] + m, K)
            if eid in a and u in dep:
                seeds[_class_key(u)] = (eid, u)

    pairs: dict = {}
    used: set = set()
    trees = _euler_trees(a)
    for eid, v in seeds.values():
        pairs[eid] = v
        used.add(v)
        queue = deque([v])
        while queue:
            node = queue.popleft()
            for ident, other in trees.get(node, []):
                if ident in pairs or other in used:
                    continue
                pairs[ident] = other
                used.add(other)
                queue.append(other)

    g = a.graph()
    ordered = [eid for eid in a.ids if eid in pairs]
    m = Matching(tuple((eid, pairs[eid]) for eid in ordered))
    source = "canonical"
    if not (m.is_variable_complete(a.dependents) and m.is_equation_complete(a.enabled)):
        m = _repair(a, g, m)
        source = "repaired"
    unmatched = tuple(eid for eid in a.ids if eid not in m.eq_to_var)
    return CanonicalMatching(m, source, unmatched)


def _repair(a: ModeChangeArray, g: BipartiteGraph, m: Matching) -> Matching:
    # cover enabled equations first, then dependents; augmenting from one
    # side never uncovers a vertex on either side
    enabled_first = [i for i in a.ids if i in a.enabled] + [i for i in a.ids if i not in a.enabled]
    ge = BipartiteGraph(enabled_first, g.variables, g.edges)
    sub = ge.subgraph([i for i in enabled_first if i in a.enabled] + list(m.eq_to_var), g.variables)
    m1 = max_matching(sub, m)
    transposed = BipartiteGraph(g.variables, g.equations, [(x, f) for f, x in g.edges])
    m2t = max_matching(transposed, Matching(tuple((x, f) for f, x in m1.pairs)))
    m2 = Matching(tuple((f, x) for x, f in m2t.pairs))
    if not (m2.is_variable_complete(a.dependents) and m2.is_equation_complete(a.enabled)):
        missing = [i for i in a.ids if i in a.enabled and i not in m2.eq_to_var]
        missing += [str(v) for v in a.dependents if v not in m2.var_to_eq]
        raise NoAdmissibleMatching(
            "no matching covers every enabled equation and dependent variable: "
            + ", ".join(missing), dm_decompose(g))
    order = {i: n for n, i in enumerate(a.ids)}
    return Matching(tuple(sorted(m2.pairs, key=lambda p: order[p[0]])))
