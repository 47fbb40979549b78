"""Restart systems.

Procedure: keep the matched equations of the array, rescale them, let
eps go to zero and rename the surviving variables into left limits
``pre(x)`` and restart values ``post(x)``; impulsive auxiliaries keep a
``scaled(...)`` name.  When the
rescaling is not good, :func:`diagnose` extracts the part of the array that
still determines some restart states.

The numeric half solves restart systems by Newton's method with symbolic
Jacobians and checks them against the rescaled array at small positive eps.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Mapping

import numpy as np

from .errors import (EpsilonSingularity, InfiniteOffset, MissingVariable, NonConvergence,
                     NoGoodSolution, Rule1Violation, SingularJacobian, UndefinedRename,
                     UnrescalableEquation)
from .expr import Expr, VarKey, evaluate, partial_derivative
from .graph import BipartiteGraph, Matching, dm_decompose, max_matching
from .mcarray import ModeChange, ModeChangeArray, build_array, canonical_matching
from .rescale import (INF, Offsets, RescalingSolution, build_rescaling_system, check_goodness,
                      expr_offset, leading_part, rescale_expr, solve_min_offsets)


# ----------------------------------------------------------------------
# step 1-2: rescaling


def _expansion(offsets: Mapping[VarKey, float]):
    """Substitution replacing each impulsive variable by its scaled form.

    A variable ``(y, m, k)`` with offset ``mu`` becomes ``eps**-mu * scaled``
    when ``m == 0``; otherwise it is written as the ``n``-th forward
    difference of ``(y, m-n, k)`` with ``n = min(mu, m)``, whose members are
    expanded in turn.
    """
    memo: dict = {}

    def repl(v: VarKey) -> Expr:
        if v in memo:
            return memo[v]
        mu = offsets.get(v, 0)
        if mu == INF:
            raise InfiniteOffset(f"{v} has infinite offset")
        if mu == 0 or v.tag:
            out = Expr.var(v)
        elif v.m == 0:
            out = Expr.eps(int(mu)) * Expr.var(v.with_tag("r"))
        else:
            n = min(int(mu), v.m)
            body = Expr()
            for i in range(n + 1):
                body = body + repl(VarKey(v.base, v.m - n, v.k + n - i)) * ((-1) ** i * comb(n, i))
            out = Expr.eps(n) * body
        memo[v] = out
        return out

    return repl


def rescale_array(a: ModeChangeArray, m: Matching, offsets: Offsets) -> dict[str, Expr]:
    """Matched equations only, each multiplied by ``eps**mu_f`` after expansion."""
    repl = _expansion(offsets.var)
    out = {}
    for eid in a.ids:
        if eid not in m.eq_to_var:
            continue
        mu_f = offsets.eq.get(eid, 0)
        if mu_f == INF:
            raise UnrescalableEquation(f"equation {eid} has infinite offset")
        out[eid] = a[eid].expr.substitute(repl) * Expr.eps_pow(int(mu_f))
    return out


def naive_array(a: ModeChangeArray, m: Matching) -> dict[str, Expr]:
    """Matched equations with eps cleared by plain multiplication (no rescaling)."""
    out = {}
    for eid in a.ids:
        if eid in m.eq_to_var:
            e = a[eid].expr
            out[eid] = e * Expr.eps_pow(e.max_eps_order())
    return out


def _unknowns_of(eqs: Iterable[Expr], known) -> list[VarKey]:
    seen: dict = {}
    for e in eqs:
        for v in sorted(e.variables, key=lambda v: v.sort_key):
            if not known(v):
                seen[v] = None
    return list(seen)


def set_epsilon_zero(rescaled: Mapping[str, Expr], a: ModeChangeArray) -> dict[str, Expr]:
    out = {}
    for eid, e in rescaled.items():
        if any(p < 0 for p in e.eps_exponents()):
            raise Rule1Violation(f"equation {eid} still has a negative eps power")
        z = leading_part(e)
        if not z.is_zero:
            out[eid] = z
    known = lambda v: v in a.past or v.base in a.mc.inputs
    unknowns = _unknowns_of(out.values(), known)
    g = BipartiteGraph(list(out), unknowns,
                       [(eid, v) for eid, e in out.items() for v in e.variables if not known(v)])
    if len(out) != len(unknowns) or len(max_matching(g)) != len(out):
        raise Rule1Violation("the system obtained at eps = 0 is structurally singular",
                             dm_decompose(g))
    return out


# ----------------------------------------------------------------------
# step 3: renaming


def renamer(a: ModeChangeArray):
    members = set(a.variables)

    def rename(v: VarKey) -> VarKey:
        if v.tag:
            return v
        if v in a.past or v.base in a.mc.inputs:
            return VarKey(v.base, v.m, 0, "-")
        if v in a.tail_variables:
            return VarKey(v.base, v.m, 0, "+")
        if v in members:
            return v
        raise UndefinedRename(f"{v} lies outside the array and has no restart name")

    return rename


@dataclass
class RestartSystem:
    equations: dict[str, Expr]
    states: tuple[VarKey, ...]
    unknowns: tuple[VarKey, ...]
    knowns: tuple[VarKey, ...]
    matching: dict[str, VarKey]
    omitted: tuple[str, ...] = ()
    array: ModeChangeArray | None = field(default=None, repr=False)
    solution: RescalingSolution | None = field(default=None, repr=False)

    good = True

    def graph(self) -> BipartiteGraph:
        u = set(self.unknowns)
        return BipartiteGraph(list(self.equations), self.unknowns,
                              [(i, v) for i, e in self.equations.items() for v in e.variables if v in u])

    def is_structurally_nonsingular(self) -> bool:
        g = self.graph()
        return len(g.equations) == len(g.variables) == len(max_matching(g))

    def pretty_lines(self) -> list[str]:
        return [f"{i}: {e.pretty()} = 0" for i, e in self.equations.items()]

    def to_json(self) -> dict:
        return {
            "equations": {i: str(e) for i, e in self.equations.items()},
            "states": [str(v) for v in self.states],
            "unknowns": [str(v) for v in self.unknowns],
            "knowns": [str(v) for v in self.knowns],
            "omitted": list(self.omitted),
        }


def _leading_tail_ids(a: ModeChangeArray) -> set[str]:
    c = a.mc.offsets.c
    return {e.id for e in a.equations
            if e.label is not None and e.m == c[e.label] and e.k == a.heights[e.label]}


def rename_restart(a0: Mapping[str, Expr], a: ModeChangeArray, m: Matching,
                   solution: RescalingSolution | None = None) -> RestartSystem:
    # the new mode's own leading equations at the tail determine post-switch
    # leading derivatives only; drop them when they form a closed block
    block = _leading_tail_ids(a) & set(a0)
    while True:
        outside = set()
        for eid, e in a0.items():
            if eid not in block:
                outside |= e.variables
        keep = {eid for eid in block if m.eq_to_var[eid] not in outside}
        if keep == block:
            break
        block = keep

    rename = renamer(a)
    sub = lambda v: Expr.var(rename(v))
    eqs: dict[str, Expr] = {}
    for eid, e in a0.items():
        if eid not in block:
            eqs[eid] = e.substitute(sub)
    states = tuple(VarKey(v.base, v.m, 0, "+") for v in a.mc.restart_states())
    for v in sorted(a.tail_variables & a.past, key=lambda v: (a.mc.new.variables.index(v.base), v.m)):
        eqs[f"cont[{VarKey(v.base, v.m)}]"] = (Expr.var(VarKey(v.base, v.m, 0, "+"))
                                               - Expr.var(VarKey(v.base, v.m, 0, "-")))
    unknowns, knowns = {}, {}
    for e in eqs.values():
        for v in sorted(e.variables, key=lambda v: v.sort_key):
            (knowns if v.tag == "-" else unknowns)[v] = None
    matching = {eid: rename(m.eq_to_var[eid]) for eid in eqs if eid in m.eq_to_var}
    return RestartSystem(eqs, states, tuple(unknowns), tuple(knowns), matching,
                         tuple(sorted(block, key=a.ids.index)), a, solution)


def procedure(a: ModeChangeArray, m: Matching, solution: RescalingSolution) -> RestartSystem:
    rescaled = rescale_array(a, m, solution.offsets)
    r = rename_restart(set_epsilon_zero(rescaled, a), a, m, solution)
    if not r.is_structurally_nonsingular():
        raise Rule1Violation("restart system is structurally singular", dm_decompose(r.graph()))
    return r


# ----------------------------------------------------------------------
# diagnosis


@dataclass
class Diagnosis:
    violations: dict[str, list]
    determined: tuple[VarKey, ...]
    undetermined: tuple[VarKey, ...]
    reduced: RestartSystem | None
    array: ModeChangeArray | None = field(default=None, repr=False)
    solution: RescalingSolution | None = field(default=None, repr=False)
    chains: dict[str, list[str]] = field(default_factory=dict)
    regular: tuple[tuple[str, ...], tuple[VarKey, ...]] = ((), ())
    note: str = ""

    good = False

    def error(self) -> NoGoodSolution:
        failed = ", ".join(f"{k}: {', '.join(str(w) for w in ws)}"
                           for k, ws in self.violations.items() if ws)
        return NoGoodSolution(f"no good solution ({failed})", self)

    def to_json(self) -> dict:
        return {
            "violations": {k: [str(w) for w in ws] for k, ws in self.violations.items()},
            "determined": [str(v) for v in self.determined],
            "undetermined": [str(v) for v in self.undetermined],
            "reduced": self.reduced.to_json() if self.reduced else None,
            "regular": {"equations": list(self.regular[0]),
                        "variables": [str(v) for v in self.regular[1]]},
            "chains": self.chains,
            "note": self.note,
        }


def _chains(solution: RescalingSolution) -> dict[str, list[str]]:
    """Forcing chain of every raised offset, witnesses first."""
    raised = [v for v, x in solution.var.items() if x]
    key = {v: i for i, v in enumerate(solution.witnesses.get("renamable", []))}
    raised.sort(key=lambda v: (v not in key and solution.var[v] != INF, key.get(v, 0)))
    return {str(v): solution.offsets.chain(v) for v in raised}


def diagnose(a: ModeChangeArray, m: Matching, solution: RescalingSolution) -> Diagnosis:
    states = tuple(VarKey(v.base, v.m, 0, "+") for v in a.mc.restart_states())
    violations = {k: list(v) for k, v in solution.witnesses.items() if v}
    if solution.good:
        r = procedure(a, m, solution)
        return Diagnosis({}, states, (), r, a, solution)
    if not (solution.rescalable and solution.non_impulsive):
        return Diagnosis(violations, (), states, None, a, solution, _chains(solution))

    witnesses = set(solution.witnesses["renamable"])
    eqs = [eid for eid in a.ids if eid in m.eq_to_var and m.eq_to_var[eid] not in witnesses]
    g = a.graph(eqs)
    dm = dm_decompose(g)
    reg_e, reg_v = set(dm.regular_equations), set(dm.regular_variables)

    # keep what the regular equations matched with restart states depend on
    tail_states = {VarKey(v.base, v.m, a.height_of(v.base)) for v in a.mc.restart_states()}
    seeds = [eid for eid in eqs if eid in reg_e and m.eq_to_var[eid] in tail_states]
    keep, stack = set(), list(seeds)
    while stack:
        eid = stack.pop()
        if eid in keep:
            continue
        keep.add(eid)
        for v in a[eid].expr.variables:
            if v in reg_v and v in m.var_to_eq and m.var_to_eq[v] in reg_e:
                stack.append(m.var_to_eq[v])
    kept = [eid for eid in eqs if eid in keep]
    sub_m = Matching(tuple((eid, m.eq_to_var[eid]) for eid in kept))
    reduced = None
    determined: tuple = ()
    note = "" if kept else "no regular equation is matched with a restart state"
    if kept:
        rescaled = rescale_array(a, sub_m, solution.offsets)
        try:
            a0 = set_epsilon_zero(rescaled, a)
            reduced = rename_restart(a0, a, sub_m, solution)
        except (Rule1Violation, UndefinedRename) as exc:
            # the regular part does not survive eps -> 0: it certifies nothing
            reduced = None
            note = f"reduced restart system rejected: {exc}"
        if reduced is not None:
            inside = set(reduced.unknowns)
            determined = tuple(s for s in states if s in inside)
    undetermined = tuple(s for s in states if s not in determined)
    regular = (tuple(kept), tuple(v for v in a.dependents if any(
        v in a[eid].expr.variables for eid in kept)))
    return Diagnosis(violations, determined, undetermined, reduced, a, solution,
                     _chains(solution), regular, note)


# ----------------------------------------------------------------------
# orchestration


def analyse(mc: ModeChange, K: int | Mapping[str, int] | None = None):
    """Array, canonical matching and rescaling solution for ``mc``."""
    a = build_array(mc, K)
    cm = canonical_matching(a)
    offsets = solve_min_offsets(build_rescaling_system(a, cm.matching))
    return a, cm, check_goodness(a, cm.matching, offsets)


def generate_restart(mc: ModeChange, K: int | Mapping[str, int] | None = None
                     ) -> RestartSystem | Diagnosis:
    a, cm, sol = analyse(mc, K)
    if sol.good:
        return procedure(a, cm.matching, sol)
    return diagnose(a, cm.matching, sol)


def require_restart(mc: ModeChange, K=None) -> RestartSystem:
    out = generate_restart(mc, K)
    if isinstance(out, Diagnosis):
        raise out.error()
    return out


# ----------------------------------------------------------------------
# numerics


_NAME = re.compile(r"^\s*(?:der\(\s*(\w+)\s*(?:,\s*(\d+)\s*)?\)|(\w+))\s*$")


def parse_limit_name(name: str, tag: str = "-") -> VarKey:
    """``"x"`` or ``"der(x,2)"`` as a tagged variable."""
    mt = _NAME.match(name)
    if not mt:
        raise ValueError(f"cannot read variable name {name!r}")
    if mt.group(3):
        return VarKey(mt.group(3), 0, 0, tag)
    return VarKey(mt.group(1), int(mt.group(2) or 1), 0, tag)


def _as_limits(left_limits: Mapping) -> dict[VarKey, float]:
    out = {}
    for k, v in left_limits.items():
        key = k if isinstance(k, VarKey) else parse_limit_name(k)
        out[key.with_tag("-")] = float(v)
    return out


def newton(eqs: list[Expr], unknowns: list[VarKey], known: Mapping[VarKey, float],
           guess: Mapping[VarKey, float] | None = None, eps: float = 0.0,
           params: Mapping | None = None, functions: Mapping | None = None,
           tol: float = 1e-10, max_iter: int = 50) -> dict[VarKey, float]:
    if len(eqs) != len(unknowns):
        raise SingularJacobian(f"{len(eqs)} equations for {len(unknowns)} unknowns")
    jac = [[partial_derivative(e, v) for v in unknowns] for e in eqs]
    x = np.array([float((guess or {}).get(v, 0.0)) for v in unknowns])

    def val(xs):
        return {**known, **dict(zip(unknowns, xs))}

    for _ in range(max_iter):
        env = val(x)
        r = np.array([evaluate(e, env, eps, params, functions) for e in eqs])
        if np.max(np.abs(r), initial=0.0) < tol:
            return dict(zip(unknowns, x.tolist()))
        J = np.array([[evaluate(d, env, eps, params, functions) if not d.is_zero else 0.0
                       for d in row] for row in jac])
        if J.size and np.linalg.cond(J) > 1e14:
            raise SingularJacobian("Jacobian is numerically singular at the current iterate")
        x = x - np.linalg.solve(J, r)
    env = val(x)
    r = np.array([evaluate(e, env, eps, params, functions) for e in eqs])
    if np.max(np.abs(r), initial=0.0) < tol:
        return dict(zip(unknowns, x.tolist()))
    raise NonConvergence(f"Newton did not converge in {max_iter} iterations "
                         f"(residual {np.max(np.abs(r)):.3e})")


def solve_restart_numeric(r: RestartSystem, left_limits: Mapping, params: Mapping | None = None,
                          functions: Mapping | None = None, tol: float = 1e-10,
                          max_iter: int = 50) -> dict[VarKey, float]:
    known = _as_limits(left_limits)
    missing = [str(v) for v in r.knowns if v not in known]
    if missing:
        raise MissingVariable("missing left limits: " + ", ".join(missing))
    guess = {v: known.get(v.with_tag("-"), 0.0) if v.tag == "+" else 0.0 for v in r.unknowns}
    sol = newton(list(r.equations.values()), list(r.unknowns), known, guess, 0.0,
                 params, functions, tol, max_iter)
    return {**known, **sol}


def left_limit_warnings(r: RestartSystem, left_limits: Mapping, params: Mapping | None = None,
                        functions: Mapping | None = None, tol: float = 1e-9) -> list[str]:
    """Residuals of the previous mode and of the facts at the given left limits.

    Left limits are taken as given and never projected; an equation is
    checked only when every variable it mentions has a left limit.
    """
    known = _as_limits(left_limits)
    checks = [(eid, e.substitute(lambda v: Expr.var(v.with_tag("-"))))
              for eid, e in r.array.mc.prev_completed.completion.items()]
    rename = renamer(r.array)
    checks += [(f"fact {f.id}", f.expr.substitute(lambda v: Expr.var(rename(v))))
               for f in r.array.facts]
    out = []
    for eid, e in checks:
        if not e.variables <= set(known):
            continue
        res = evaluate(e, known, 0.0, params, functions)
        if abs(res) > tol:
            out.append(f"left limits violate {eid} (residual {res:.3g})")
    return out


def _past_value(v: VarKey, limits: Mapping[VarKey, float], eps: float) -> float:
    """Taylor extrapolation of ``(y, m, k)`` from the left limits of ``y``."""
    total, j = 0.0, 0
    while True:
        key = VarKey(v.base, v.m + j, 0, "-")
        if key not in limits:
            break
        total += (v.k * eps) ** j / math.factorial(j) * limits[key]
        j += 1
    if j == 0:
        raise MissingVariable(f"no left limit for {VarKey(v.base, v.m)}")
    return total


@dataclass
class ConvergenceReport:
    eps: list[float]
    errors: list[float]
    orders: list[float]

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    @property
    def min_order(self) -> float:
        return min(self.orders, default=math.inf)

    def to_json(self) -> dict:
        return {"eps": self.eps, "errors": self.errors, "orders": self.orders,
                "decreasing": self.decreasing}


def epsilon_convergence_check(r: RestartSystem, left_limits: Mapping, eps_list: Iterable[float],
                              params: Mapping | None = None, functions: Mapping | None = None
                              ) -> ConvergenceReport:
    """Distance between the rescaled array solved at eps > 0 and the restart values."""
    a, sol = r.array, r.solution
    limits = _as_limits(left_limits)
    restart = solve_restart_numeric(r, left_limits, params, functions)
    rescaled = rescale_array(a, sol.matching, sol.offsets)
    eqs = [e for e in rescaled.values() if not e.is_zero]
    known_test = lambda v: v in a.past or v.base in a.mc.inputs
    unknowns = _unknowns_of(eqs, known_test)
    past = {v for e in eqs for v in e.variables if known_test(v)}
    rename = renamer(a)
    tail = {VarKey(s.base, s.m, a.height_of(s.base)): s for s in r.states}
    eps_list = [float(e) for e in eps_list]
    errors = []
    for eps in eps_list:
        known = {v: _past_value(v, limits, eps) for v in past}
        guess = {v: restart.get(rename(v), 0.0) for v in unknowns}
        x = {**known, **newton(eqs, unknowns, known, guess, eps, params, functions, tol=1e-12)}
        errors.append(max(abs(x[t] - restart[s]) for t, s in tail.items()))
    orders = []
    for (e1, d1), (e2, d2) in zip(zip(eps_list, errors), zip(eps_list[1:], errors[1:])):
        if d1 > 0 and d2 > 0:
            orders.append(math.log(d1 / d2) / math.log(e1 / e2))
    return ConvergenceReport(eps_list, errors, orders)


# ----------------------------------------------------------------------
# the Lambda map and invariants


def apply_lambda(e: Expr, offsets: Mapping[VarKey, float]) -> Expr:
    """Rescale ``e`` by its own offset and let eps go to zero."""
    if expr_offset(e, offsets) == INF:
        raise InfiniteOffset(f"{e} cannot be rescaled")
    out = leading_part(rescale_expr(e, offsets))
    if any(p < 0 for p in out.eps_exponents()):
        raise EpsilonSingularity(f"Lambda({e}) keeps a negative eps power")
    return out


@dataclass
class InvariantReport:
    expressions: list[Expr]
    values: list[float]
    tol: float

    @property
    def ok(self) -> bool:
        return all(abs(v) < self.tol for v in self.values)


def check_invariant_preservation(r: RestartSystem, common_equations: Iterable[Expr],
                                 left_limits: Mapping, params: Mapping | None = None,
                                 functions: Mapping | None = None, tol: float = 1e-9,
                                 valuation: Mapping[VarKey, float] | None = None
                                 ) -> InvariantReport:
    """Evaluate Lambda of equations shared by both modes at the restart valuation.

    Scaled head variables are read back through their Euler representatives,
    e.g. ``scaled(der(x,2))`` is ``post(der(x)) - pre(der(x))`` when
    ``der(x,2)`` has offset 1.
    """
    a, sol = r.array, r.solution
    mu = sol.var
    val = dict(valuation) if valuation is not None else solve_restart_numeric(
        r, left_limits, params, functions)
    repl = _expansion(mu)
    rename = renamer(a)

    def scaled_value(v: VarKey) -> Expr:
        base = v.with_tag("")
        n = mu.get(base, 0)
        if base.m == 0:
            return Expr.var(v)
        e = leading_part(repl(base) * Expr.eps_pow(int(n)))
        return e.substitute(lambda w: Expr.var(rename(w)))

    exprs, values = [], []
    for f in common_equations:
        lam = apply_lambda(f, mu)
        lam = lam.substitute(lambda v: scaled_value(v) if v.tag == "r" else Expr.var(rename(v)))
        exprs.append(lam)
        values.append(evaluate(lam, val, 0.0, params, functions))
    return InvariantReport(exprs, values, tol)
