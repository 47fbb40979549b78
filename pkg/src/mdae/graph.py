"""Bipartite incidence graphs between equations and variables.

Vertices are arbitrary hashable ids kept in insertion order; that order is
the canonical tie-breaking order for every algorithm in this module, which
makes matchings (and therefore every downstream report) reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping


class BipartiteGraph:
    def __init__(self, equations: Iterable[Hashable], variables: Iterable[Hashable],
                 edges: Iterable[tuple[Hashable, Hashable]]):
        self.equations: list = list(dict.fromkeys(equations))
        self.variables: list = list(dict.fromkeys(variables))
        eq_index = {e: i for i, e in enumerate(self.equations)}
        var_index = {v: i for i, v in enumerate(self.variables)}
        adj: dict = {e: set() for e in self.equations}
        for f, x in edges:
            if f not in eq_index or x not in var_index:
                raise ValueError(f"edge ({f}, {x}) references an undeclared vertex")
            adj[f].add(x)
        self._adj = {f: sorted(xs, key=var_index.__getitem__) for f, xs in adj.items()}
        inc: dict = {x: [] for x in self.variables}
        for f in self.equations:
            for x in self._adj[f]:
                inc[x].append(f)
        self._inc = inc
        self._eq_index = eq_index
        self._var_index = var_index

    @property
    def edges(self) -> list[tuple]:
        return [(f, x) for f in self.equations for x in self._adj[f]]

    def neighbors(self, f) -> list:
        return self._adj[f]

    def incident(self, x) -> list:
        return self._inc[x]

    def has_edge(self, f, x) -> bool:
        return f in self._adj and x in self._adj[f]

    def subgraph(self, equations: Iterable, variables: Iterable) -> "BipartiteGraph":
        eqs = [f for f in self.equations if f in set(equations)]
        vs = set(variables)
        keep = [x for x in self.variables if x in vs]
        return BipartiteGraph(eqs, keep, [(f, x) for f in eqs for x in self._adj[f] if x in vs])

    def __repr__(self) -> str:
        return f"BipartiteGraph({len(self.equations)} eqs, {len(self.variables)} vars, {len(self.edges)} edges)"


@dataclass(frozen=True)
class Matching:
    """Set of (equation, variable) pairs using each vertex at most once."""

    pairs: tuple[tuple, ...]
    eq_to_var: Mapping = field(init=False, repr=False, compare=False)
    var_to_eq: Mapping = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        e2v, v2e = {}, {}
        for f, x in self.pairs:
            if f in e2v or x in v2e:
                raise ValueError(f"pair ({f}, {x}) reuses a matched vertex")
            e2v[f] = x
            v2e[x] = f
        object.__setattr__(self, "eq_to_var", e2v)
        object.__setattr__(self, "var_to_eq", v2e)

    @staticmethod
    def from_dict(eq_to_var: Mapping) -> "Matching":
        return Matching(tuple(eq_to_var.items()))

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, item) -> bool:
        return item in self.eq_to_var or item in self.var_to_eq

    def as_set(self) -> frozenset:
        return frozenset(self.pairs)

    def is_valid_for(self, g: BipartiteGraph) -> bool:
        return all(g.has_edge(f, x) for f, x in self.pairs)

    def is_variable_complete(self, variables: Iterable) -> bool:
        return all(x in self.var_to_eq for x in variables)

    def is_equation_complete(self, equations: Iterable) -> bool:
        return all(f in self.eq_to_var for f in equations)

    def is_perfect(self, g: BipartiteGraph) -> bool:
        return (len(g.equations) == len(g.variables) == len(self)
                and self.is_valid_for(g))


def _augment_from(g: BipartiteGraph, root, e2v: dict, v2e: dict) -> bool:
    """Kuhn-style search for an augmenting path starting at equation ``root``."""
    parent: dict = {}
    seen = {root}
    queue = deque([root])
    while queue:
        f = queue.popleft()
        for x in g.neighbors(f):
            if x in parent:
                continue
            parent[x] = f
            owner = v2e.get(x)
            if owner is None:
                # flip the path back to the root
                while True:
                    f_prev = parent[x]
                    x_prev = e2v.get(f_prev)
                    e2v[f_prev] = x
                    v2e[x] = f_prev
                    if f_prev == root:
                        return True
                    x = x_prev
            if owner not in seen:
                seen.add(owner)
                queue.append(owner)
    return False


def max_matching(g: BipartiteGraph, initial: Matching | None = None) -> Matching:
    """Maximum-cardinality matching, deterministic in the vertex order.

    Equations are processed in order and each grabs the lowest-index free
    variable reachable by a shortest augmenting path.  If ``initial`` is
    given, it is only ever augmented, so every vertex it covers stays covered.
    """
    e2v: dict = {}
    v2e: dict = {}
    if initial is not None:
        for f, x in initial.pairs:
            e2v[f] = x
            v2e[x] = f
    for f in g.equations:
        if f not in e2v:
            _augment_from(g, f, e2v, v2e)
    return Matching(tuple((f, e2v[f]) for f in g.equations if f in e2v))


@dataclass(frozen=True)
class DMDecomposition:
    over_equations: tuple
    over_variables: tuple
    regular_equations: tuple
    regular_variables: tuple
    under_equations: tuple
    under_variables: tuple
    matching: Matching

    @property
    def is_regular(self) -> bool:
        return not (self.over_equations or self.over_variables
                    or self.under_equations or self.under_variables)

    def to_json(self) -> dict:
        return {
            "over": {"equations": [str(f) for f in self.over_equations],
                     "variables": [str(x) for x in self.over_variables]},
            "regular": {"equations": [str(f) for f in self.regular_equations],
                        "variables": [str(x) for x in self.regular_variables]},
            "under": {"equations": [str(f) for f in self.under_equations],
                      "variables": [str(x) for x in self.under_variables]},
        }


def dm_decompose(g: BipartiteGraph, matching: Matching | None = None) -> DMDecomposition:
    """Coarse Dulmage-Mendelsohn decomposition via alternating reachability.

    The under-determined part is everything reachable from an unmatched
    variable (variable to incident equation, equation to its matched
    variable); the over-determined part is everything reachable from an
    unmatched equation (equation to adjacent variable, variable to its
    matched equation).  Both are independent of which maximum matching is used.
    """
    m = matching if matching is not None else max_matching(g)
    e2v, v2e = m.eq_to_var, m.var_to_eq

    under_v: set = set()
    under_e: set = set()
    queue = deque(x for x in g.variables if x not in v2e)
    under_v.update(queue)
    while queue:
        x = queue.popleft()
        for f in g.incident(x):
            if f in under_e:
                continue
            under_e.add(f)
            y = e2v.get(f)
            if y is not None and y not in under_v:
                under_v.add(y)
                queue.append(y)

    over_e: set = set()
    over_v: set = set()
    queue = deque(f for f in g.equations if f not in e2v)
    over_e.update(queue)
    while queue:
        f = queue.popleft()
        for x in g.neighbors(f):
            if x in over_v:
                continue
            over_v.add(x)
            h = v2e.get(x)
            if h is not None and h not in over_e:
                over_e.add(h)
                queue.append(h)

    def ordered(items, pool):
        return tuple(v for v in pool if v in items)

    reg_e = [f for f in g.equations if f not in under_e and f not in over_e]
    reg_v = [x for x in g.variables if x not in under_v and x not in over_v]
    return DMDecomposition(
        ordered(over_e, g.equations), ordered(over_v, g.variables),
        tuple(reg_e), tuple(reg_v),
        ordered(under_e, g.equations), ordered(under_v, g.variables),
        m,
    )


def is_structurally_nonsingular(g: BipartiteGraph) -> bool:
    return len(g.equations) == len(g.variables) == len(max_matching(g))


def quotient_graph(equations: Iterable, variables: Iterable, edges: Iterable[tuple],
                   key: Callable[[Hashable], Hashable]) -> tuple[BipartiteGraph, dict]:
    """Merge variables with equal ``key``; returns the graph and the class map."""
    classes: dict = {}
    for x in variables:
        classes.setdefault(key(x), []).append(x)
    q_edges = {(f, key(x)) for f, x in edges}
    return BipartiteGraph(equations, list(classes), sorted(q_edges, key=str)), classes
