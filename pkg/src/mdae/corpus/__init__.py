"""Shipped model fixtures and their golden expectations.

Each fixture lives in ``corpus/<name>/`` with a ``model.mdae`` source, an
``expect.json`` file and optionally a ``limits.json`` file of left limits.
``run_corpus`` re-runs the analysis of every fixture and compares it field by
field.  Expressions are compared with ``equal_up_to_constant`` and must match
with factor exactly 1, so coefficients and signs are checked too, not only
incidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..errors import MdaeError
from ..expr import equal_up_to_constant
from ..mcarray import compute_height_bounds
from ..model import Model, load_model, parse_expr, validate_model
from ..restart import RestartSystem, analyse, diagnose, procedure, solve_restart_numeric


def corpus_dir() -> Path:
    return Path(str(resources.files(__name__)))


@dataclass
class GoldenCase:
    name: str
    model_file: Path
    expect: dict
    limits: dict | None = None

    @property
    def transition(self) -> tuple[str, str] | None:
        t = self.expect.get("transition")
        return tuple(t) if t else None

    @property
    def height(self) -> int | None:
        return self.expect.get("height")

    @classmethod
    def load(cls, directory: Path) -> "GoldenCase":
        expect = json.loads((directory / "expect.json").read_text())
        lim = directory / "limits.json"
        limits = json.loads(lim.read_text()) if lim.exists() else None
        return cls(directory.name, directory / "model.mdae", expect, limits)


def load_cases(root: Path | None = None) -> list[GoldenCase]:
    root = root or corpus_dir()
    return [GoldenCase.load(d) for d in sorted(root.iterdir())
            if d.is_dir() and (d / "expect.json").exists()]


@dataclass
class CaseResult:
    name: str
    checks: dict[str, bool] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def record(self, key: str, ok: bool, detail: str = "") -> None:
        self.checks[key] = self.checks.get(key, True) and ok
        if not ok:
            self.messages.append(f"{key}: {detail}" if detail else key)


def _same_expressions(model: Model, expected: dict[str, str], actual: dict) -> tuple[bool, str]:
    if set(expected) != set(actual):
        return False, f"equation ids {sorted(actual)} != {sorted(expected)}"
    for eid, text in expected.items():
        factor = equal_up_to_constant(actual[eid], parse_expr(text, model))
        if factor != 1:
            return False, f"{eid}: got {actual[eid]}, expected {text}"
    return True, ""


def _offsets_ok(table: dict, expected: dict) -> tuple[bool, str]:
    """Listed entries must match; unlisted entries must be zero."""
    for k, v in table.items():
        want = expected.get(k, 0)
        got = "inf" if v == math.inf else int(v)
        if got != want:
            return False, f"{k}: got {got}, expected {want}"
    missing = set(expected) - set(table)
    if missing:
        return False, f"not in array: {sorted(missing)}"
    return True, ""


def run_case(case: GoldenCase) -> CaseResult:
    res = CaseResult(case.name)
    exp = case.expect
    model = load_model(case.model_file)

    if "check" in exp:
        rep = validate_model(model)
        kinds = sorted({f.kind for f in rep.findings})
        res.record("check", rep.ok == exp["check"]["ok"] and kinds == sorted(exp["check"]["findings"]),
                   f"findings {kinds}")
    if case.transition is None:
        return res

    mc = model.mode_change(*case.transition)
    if "sigma" in exp:
        res.record("sigma", mc.offsets.c == exp["sigma"]["c"] and mc.offsets.d == exp["sigma"]["d"],
                   f"c={mc.offsets.c} d={mc.offsets.d}")
    if "heights" in exp:
        b = compute_height_bounds(mc)
        lo, hi = set(b.lower.values()), set(b.upper.values())
        res.record("heights", lo == {exp["heights"]["lower"]} and hi == {exp["heights"]["upper"]},
                   f"K_*={b.lower} K^*={b.upper}")
    try:
        a, cm, sol = analyse(mc, case.height)
    except MdaeError as exc:
        res.record("outcome", exp.get("outcome") == type(exc).__name__, str(exc))
        return res
    if "facts" in exp:
        facts = [e.id for e in a.facts]
        res.record("facts", sorted(facts) == sorted(exp["facts"]), f"{facts}")
    if "offsets" in exp:
        ok, why = _offsets_ok({str(v): x for v, x in sol.var.items()}, exp["offsets"]["variables"])
        res.record("variable offsets", ok, why)
        ok, why = _offsets_ok(sol.eq, exp["offsets"].get("equations", {}))
        res.record("equation offsets", ok, why)
    if "witnesses" in exp:
        got = {k: sorted(str(w) for w in ws) for k, ws in sol.witnesses.items() if ws}
        want = {k: sorted(ws) for k, ws in exp["witnesses"].items() if ws}
        res.record("witnesses", got == want, f"{got}")

    outcome = "restart" if sol.good else "diagnosis"
    res.record("outcome", outcome == exp.get("outcome", outcome), outcome)
    if sol.good:
        r = procedure(a, cm.matching, sol)
        if "restart" in exp:
            ok, why = _same_expressions(model, exp["restart"], r.equations)
            res.record("restart equations", ok, why)
        if "numeric" in exp and case.limits is not None:
            _check_numeric(res, model, r, case.limits, exp["numeric"])
    else:
        d = diagnose(a, cm.matching, sol)
        de = exp.get("diagnosis", {})
        if "determined" in de:
            got = sorted(str(v) for v in d.determined)
            res.record("determined", got == sorted(de["determined"]), f"{got}")
        if "undetermined" in de:
            got = sorted(str(v) for v in d.undetermined)
            res.record("undetermined", got == sorted(de["undetermined"]), f"{got}")
        if "reduced" in de:
            if d.reduced is None:
                res.record("reduced equations", de["reduced"] is None, "no reduced system")
            elif de["reduced"] is None:
                res.record("reduced equations", False, "unexpected reduced system")
            else:
                ok, why = _same_expressions(model, de["reduced"], d.reduced.equations)
                res.record("reduced equations", ok, why)
    return res


def _check_numeric(res: CaseResult, model: Model, r: RestartSystem, limits: dict,
                   expected: dict) -> None:
    params = {k: float(v) for k, v in model.param_values().items()}
    params.update(limits.get("params", {}))
    lim = {k: v for k, v in limits.items() if k != "params"}
    values = {str(k): v for k, v in solve_restart_numeric(r, lim, params).items()}
    bad = [k for k, v in expected.items() if abs(values.get(k, math.nan) - v) > 1e-9]
    res.record("numeric", not bad, ", ".join(f"{k}={values.get(k)}" for k in bad))


def run_corpus(root: Path | None = None) -> dict[str, CaseResult]:
    """Run every fixture and return the pass/fail matrix keyed by fixture name."""
    return {c.name: run_case(c) for c in load_cases(root)}


def format_matrix(results: dict[str, CaseResult]) -> str:
    lines = []
    for name, r in results.items():
        mark = "PASS" if r.passed else "FAIL"
        lines.append(f"{mark} {name}: " + ", ".join(
            f"{k}={'ok' if v else 'FAIL'}" for k, v in r.checks.items()))
        lines.extend(f"    {m}" for m in r.messages)
    return "\n".join(lines)
