"""Structural index reduction of a single-mode DAE (Pryce's Sigma-method).

The signature sigma[f, x] is the highest derivative order of ``x`` in ``f``;
a maximum-weight perfect matching on it fixes the leading variables, and the
dual fixpoint yields the minimal equation offsets ``c`` and variable offsets
``d``.  ``complete`` then materializes the differentiated copies of every
equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NonConvergent, StructurallySingular
from .expr import Expr, VarKey, differentiate, primitive
from .graph import BipartiteGraph, Matching, dm_decompose, max_matching


def eq_name(label: str, m: int = 0, k: int = 0) -> str:
    """Display id of equation ``label`` differentiated ``m`` times at instant ``k``."""
    return label + "'" * m + (f"@{k}" if k else "")


@dataclass(frozen=True)
class DAESystem:
    name: str
    equations: Mapping[str, Expr]
    variables: tuple[str, ...]
    inputs: tuple[str, ...] = ()

    @property
    def labels(self) -> list[str]:
        return list(self.equations)

    def signature(self) -> dict[tuple[str, str], int]:
        sig: dict = {}
        known = set(self.variables)
        for label, e in self.equations.items():
            for v in e.variables:
                if v.tag or v.k or v.base not in known:
                    continue
                key = (label, v.base)
                sig[key] = max(sig.get(key, -1), v.m)
        return sig

    def incidence(self) -> BipartiteGraph:
        return BipartiteGraph(self.labels, self.variables, list(self.signature()))

    @property
    def is_square(self) -> bool:
        return len(self.equations) == len(self.variables)

    def components(self) -> list[tuple[list[str], list[str]]]:
        """Connected components of the incidence graph, in declaration order."""
        sig = self.signature()
        parent = {("f", f): ("f", f) for f in self.labels}
        parent.update({("x", x): ("x", x) for x in self.variables})

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for f, x in sig:
            ra, rb = find(("f", f)), find(("x", x))
            if ra != rb:
                parent[rb] = ra
        groups: dict = {}
        for node in parent:
            groups.setdefault(find(node), []).append(node)
        out = []
        seen = set()
        for f in self.labels:
            root = find(("f", f))
            if root in seen:
                continue
            seen.add(root)
            nodes = groups[root]
            out.append(([n for k, n in nodes if k == "f"], [n for k, n in nodes if k == "x"]))
        for x in self.variables:
            root = find(("x", x))
            if root not in seen:
                seen.add(root)
                out.append(([], [x]))
        return out


@dataclass(frozen=True)
class SigmaOffsets:
    c: dict[str, int]
    d: dict[str, int]
    matching: Matching
    signature: dict[tuple[str, str], int] = field(repr=False)

    def matched_var(self, f: str) -> str:
        return self.matching.eq_to_var[f]

    def matched_eq(self, x: str) -> str:
        return self.matching.var_to_eq[x]

    def to_json(self) -> dict:
        return {
            "c": dict(self.c),
            "d": dict(self.d),
            "matching": [[f, x] for f, x in self.matching.pairs],
        }


_NEG = -10**6


def _assignment_weight(w: np.ndarray) -> int:
    rows, cols = linear_sum_assignment(w, maximize=True)
    return int(round(w[rows, cols].sum()))


def _max_weight_matching(s: DAESystem, sig: dict) -> Matching:
    eqs, xs = s.labels, list(s.variables)
    n = len(eqs)
    w = np.full((n, n), float(_NEG))
    for (f, x), v in sig.items():
        w[eqs.index(f), xs.index(x)] = v
    best = _assignment_weight(w)
    if best <= _NEG // 2:
        raise StructurallySingular(f"mode {s.name} has no perfect matching",
                                   dm_decompose(s.incidence()))
    # pin pairs one equation at a time, lowest variable index first
    pairs = []
    for i, f in enumerate(eqs):
        for j, x in enumerate(xs):
            if w[i, j] <= _NEG // 2:
                continue
            trial = w.copy()
            trial[i, :] = _NEG
            trial[:, j] = _NEG
            trial[i, j] = w[i, j]
            if _assignment_weight(trial) == best:
                w = trial
                pairs.append((f, x))
                break
    return Matching(tuple(pairs))


def solve_sigma(s: DAESystem) -> SigmaOffsets:
    if not s.is_square:
        raise StructurallySingular(
            f"mode {s.name} has {len(s.equations)} equations for {len(s.variables)} variables",
            dm_decompose(s.incidence()))
    sig = s.signature()
    if not is_perfect(s):
        raise StructurallySingular(f"mode {s.name} is structurally singular",
                                   dm_decompose(s.incidence()))
    m = _max_weight_matching(s, sig)
    c = {f: 0 for f in s.labels}
    d = {x: 0 for x in s.variables}
    bound = len(s.labels) * (1 + max(sig.values(), default=0))
    while True:
        for x in s.variables:
            d[x] = max(c[f] + sig[(f, x)] for f in s.labels if (f, x) in sig)
        new_c = {f: d[m.eq_to_var[f]] - sig[(f, m.eq_to_var[f])] for f in s.labels}
        if any(v > bound for v in new_c.values()):
            raise NonConvergent(f"offsets of mode {s.name} exceed {bound}")
        if new_c == c:
            break
        c = new_c
    return SigmaOffsets(c, d, m, sig)


def is_perfect(s: DAESystem) -> bool:
    g = s.incidence()
    return len(g.equations) == len(g.variables) == len(max_matching(g))


@dataclass(frozen=True)
class CompletedSystem:
    """Index-reduced part, consistency part and their matchings."""

    leading: dict[str, Expr]          # eq_name(f, c_f) -> f^(c_f)
    consistency: dict[str, Expr]      # eq_name(f, m) -> f^(m), m < c_f
    leading_matching: Matching        # pairs (eq id, VarKey)
    consistency_matching: Matching
    derivatives: dict[tuple[str, int], Expr]

    @property
    def completion(self) -> dict[str, Expr]:
        return {**self.consistency, **self.leading}


def complete(s: DAESystem, offsets: SigmaOffsets) -> CompletedSystem:
    derivs: dict = {}
    leading, consistency = {}, {}
    lead_pairs, cons_pairs = [], []
    for f, e in s.equations.items():
        cur = e
        x = offsets.matched_var(f)
        cf, dx = offsets.c[f], offsets.d[x]
        for m in range(cf + 1):
            if m:
                # latent equations are kept in primitive form
                cur = primitive(differentiate(cur))
            derivs[(f, m)] = cur
            name = eq_name(f, m)
            if m == cf:
                leading[name] = cur
                lead_pairs.append((name, VarKey(x, dx)))
            else:
                consistency[name] = cur
                cons_pairs.append((name, VarKey(x, dx - cf + m)))
    return CompletedSystem(leading, consistency, Matching(tuple(lead_pairs)),
                           Matching(tuple(cons_pairs)), derivs)
