"""Command-line front end: ``mdae check``, ``mdae restart`` and ``mdae explain``.

Every command builds a JSON report first; the text output is rendered from
that report alone, so both views always agree.  Exit codes are stable for
scripting: 0 good, 2 diagnosis (under-determined restart), 3 structural
failure, 4 usage or I/O problem.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .errors import MdaeError, MissingVariable, ModelError
from .mcarray import ModeChangeArray, compute_height_bounds
from .model import Model, load_model, validate_model
from .restart import (RestartSystem, analyse, diagnose, epsilon_convergence_check,
                      left_limit_warnings, procedure, solve_restart_numeric)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_DIAGNOSIS = 2
EXIT_STRUCTURAL = 3
EXIT_USAGE = 4


class _Fail(Exception):
    def __init__(self, code: int, report: dict):
        super().__init__(report.get("error", {}).get("message", ""))
        self.code = code
        self.report = report


# ----------------------------------------------------------------------
# report assembly


def _names(vs) -> dict[str, str]:
    return {str(v): v.pretty() for v in sorted(set(vs), key=lambda v: v.sort_key)}


def _error_json(exc: Exception) -> dict:
    out = {"type": type(exc).__name__, "message": str(exc)}
    cert = getattr(exc, "certificate", None)
    if cert is not None and hasattr(cert, "to_json"):
        out["certificate"] = cert.to_json()
    errors = getattr(exc, "errors", None)
    if errors:
        out["locations"] = [{"line": ln, "col": col, "message": msg} for ln, col, msg in errors]
    return out


def _load(path: str) -> Model:
    try:
        return load_model(path)
    except ModelError as exc:
        raise _Fail(EXIT_USAGE, {"error": _error_json(exc)}) from exc


def _header(command: str, model: Model) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "model": model.name}


def _array_json(a: ModeChangeArray, cm, sol) -> dict:
    mc = a.mc
    bounds = compute_height_bounds(mc)
    return {
        "sigma": {"previous": mc.prev_offsets.to_json(), "new": mc.offsets.to_json()},
        "heights": {"lower": bounds.lower, "upper": bounds.upper, "chosen": dict(a.heights),
                    "capped": list(bounds.capped)},
        "facts": [e.id for e in a.facts],
        "disabled": sorted(a.disabled),
        "past": [str(v) for v in sorted(a.past, key=lambda v: v.sort_key)],
        "matching": {"source": cm.source,
                     "pairs": [[eid, str(v)] for eid, v in cm.matching.pairs]},
        "rescaling": sol.to_json(),
    }


def _parse_limits(text: str) -> dict:
    if text.lstrip().startswith("{"):
        raw = text
    else:
        try:
            raw = Path(text).read_text()
        except OSError as exc:
            raise _Fail(EXIT_USAGE, {"error": {"type": "OSError",
                                               "message": f"cannot read {text}: {exc.strerror}"}})
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise _Fail(EXIT_USAGE, {"error": {"type": "JSONDecodeError", "message": str(exc)}})
    if not isinstance(data, dict):
        raise _Fail(EXIT_USAGE, {"error": {"type": "ValueError",
                                           "message": "limits must be a JSON object"}})
    return data


def _split_limits(model: Model, data: dict) -> tuple[dict, dict]:
    params = {k: float(v) for k, v in model.param_values().items()}
    params.update({k: float(v) for k, v in data.get("params", {}).items()})
    limits = {k: v for k, v in data.items() if k != "params"}
    return limits, params


def _numeric(model: Model, r: RestartSystem, limits_text: str, eps_text: str | None) -> dict:
    limits, params = _split_limits(model, _parse_limits(limits_text))
    try:
        values = solve_restart_numeric(r, limits, params)
        out = {"values": {str(v): values[v] for v in r.unknowns},
               "states": {str(s): values[s] for s in r.states if s in values},
               "warnings": left_limit_warnings(r, limits, params)}
        if eps_text:
            eps = [float(e) for e in eps_text.split(",") if e.strip()]
            out["convergence"] = epsilon_convergence_check(r, limits, eps, params).to_json()
    except (MissingVariable, ValueError) as exc:
        raise _Fail(EXIT_USAGE, {"error": _error_json(exc)}) from exc
    return out


def build_check(path: str) -> tuple[int, dict]:
    model = _load(path)
    rep = validate_model(model)
    report = _header("check", model) | rep.to_json()
    report["ok"] = rep.ok
    return (EXIT_OK if rep.ok else EXIT_STRUCTURAL), report


def _analysis(model: Model, source: str, target: str, height: int | None):
    try:
        mc = model.mode_change(source, target)
    except ModelError as exc:
        raise _Fail(EXIT_USAGE, _header("restart", model) | {"error": _error_json(exc)}) from exc
    return mc, analyse(mc, height)


def build_restart(path: str, source: str, target: str, height: int | None = None,
                  limits: str | None = None, verify_eps: str | None = None) -> tuple[int, dict]:
    model = _load(path)
    report = _header("restart", model) | {"transition": [source, target]}
    try:
        mc, (a, cm, sol) = _analysis(model, source, target, height)
        report.update(_array_json(a, cm, sol))
        names = set(a.variables)
        if sol.good:
            r = procedure(a, cm.matching, sol)
            names |= set(r.unknowns) | set(r.knowns)
            report["outcome"] = "restart"
            report["restart"] = r.to_json() | {"pretty": r.pretty_lines()}
            if limits:
                report["numeric"] = _numeric(model, r, limits, verify_eps)
            code = EXIT_OK
        else:
            d = diagnose(a, cm.matching, sol)
            names |= set(d.determined) | set(d.undetermined)
            report["outcome"] = "diagnosis"
            report["diagnosis"] = d.to_json()
            if d.reduced is not None:
                names |= set(d.reduced.unknowns) | set(d.reduced.knowns)
                report["diagnosis"]["reduced"]["pretty"] = d.reduced.pretty_lines()
            code = EXIT_DIAGNOSIS
        report["names"] = _names(names)
    except _Fail as exc:
        raise _Fail(exc.code, report | exc.report) from exc
    except ModelError as exc:
        raise _Fail(EXIT_USAGE, report | {"error": _error_json(exc)}) from exc
    except MdaeError as exc:
        raise _Fail(EXIT_STRUCTURAL, report | {"outcome": "failure",
                                               "error": _error_json(exc)}) from exc
    return code, report


def build_explain(path: str, source: str, target: str, height: int | None = None
                  ) -> tuple[int, dict]:
    model = _load(path)
    report = _header("explain", model) | {"transition": [source, target]}
    try:
        mc, (a, cm, sol) = _analysis(model, source, target, height)
    except _Fail as exc:
        raise _Fail(exc.code, report | exc.report) from exc
    except MdaeError as exc:
        raise _Fail(EXIT_STRUCTURAL, report | {"error": _error_json(exc)}) from exc
    report.update(_array_json(a, cm, sol))
    matched = cm.matching.eq_to_var
    facts = {e.id for e in a.facts}
    rows = []
    for e in list(a.facts) + list(a.equations):
        if e.is_euler:
            status = "euler"
        elif e.id in facts:
            status = "fact"
        elif e.id in a.disabled:
            status = "disabled"
        elif e.id in a.tail_equations:
            status = "tail"
        else:
            status = "enabled"
        v = matched.get(e.id)
        rows.append({"id": e.id, "instant": e.k, "status": status,
                     "equation": e.expr.pretty(), "matched": v.pretty() if v else None,
                     "offset": report["rescaling"]["equations"].get(e.id)})
    rows.sort(key=lambda r: (r["status"] == "euler", r["instant"]))
    report["rows"] = rows
    report["names"] = _names(a.variables)
    return (EXIT_OK if sol.good else EXIT_DIAGNOSIS), report


# ----------------------------------------------------------------------
# text rendering (from the JSON report only)


def _style(text: str, **kw) -> str:
    return click.style(text, **kw)


def _pretty(report: dict, name: str) -> str:
    return report.get("names", {}).get(name, name)


def render_text(report: dict) -> str:
    out: list[str] = []
    add = out.append
    add(_style(f"model {report.get('model', '?')}", bold=True)
        + (f"  {report['transition'][0]} -> {report['transition'][1]}"
           if "transition" in report else ""))
    if report.get("command") == "check":
        for mode, offs in report.get("modes", {}).items():
            add(f"mode {mode}: c={offs['c']} d={offs['d']}")
        for f in report.get("findings", []):
            where = f" mode {f['mode']}:" if f.get("mode") else ""
            add(_style(f"[{f['kind']}]", fg="red") + f"{where} {f['message']}")
        add("ok" if report.get("ok") else _style("findings reported", fg="red"))
    if "sigma" in report:
        new = report["sigma"]["new"]
        add(f"sigma offsets: c={new['c']} d={new['d']}")
        h = report["heights"]
        add(f"heights: chosen={h['chosen']} K_*={h['lower']} K^*={h['upper']}")
        add("facts: " + (", ".join(report["facts"]) or "none"))
        add("disabled: " + (", ".join(report["disabled"]) or "none"))
    if "rows" in report:
        add("")
        width = max(len(r["id"]) for r in report["rows"])
        for r in report["rows"]:
            offset = "" if r["offset"] is None else f" mu={r['offset']}"
            match = f" -> {r['matched']}" if r["matched"] else ""
            add(f"k={r['instant']} {r['id']:<{width}} {r['status']:<8} "
                f"{r['equation']} = 0{match}{offset}")
    elif "matching" in report:
        add(f"matching ({report['matching']['source']}):")
        for eid, v in report["matching"]["pairs"]:
            add(f"  {eid} -> {_pretty(report, v)}")
    if "rescaling" in report:
        resc = report["rescaling"]
        raised = {k: v for k, v in resc["variables"].items() if v != 0}
        add("rescaling offsets: " + (", ".join(f"mu({_pretty(report, k)})={v}"
                                               for k, v in raised.items()) or "all zero"))
        g = resc["goodness"]
        add("goodness: " + " ".join(f"{k}={'ok' if v else 'violated'}" for k, v in g.items()))
        for k, ws in resc["witnesses"].items():
            if ws:
                add(_style(f"  {k} witnesses: ", fg="yellow")
                    + ", ".join(_pretty(report, w) for w in ws))
    if "restart" in report:
        add(_style("restart system:", bold=True))
        out.extend(f"  {line}" for line in report["restart"]["pretty"])
        if report["restart"]["omitted"]:
            add("  omitted: " + ", ".join(report["restart"]["omitted"]))
    if "diagnosis" in report:
        d = report["diagnosis"]
        add(_style("diagnosis: no good solution", fg="red", bold=True))
        add("  determined: " + (", ".join(_pretty(report, v) for v in d["determined"]) or "none"))
        add("  undetermined: " + (", ".join(_pretty(report, v) for v in d["undetermined"])
                                   or "none"))
        if d.get("reduced"):
            out.extend(f"  {line}" for line in d["reduced"]["pretty"])
        if d.get("note"):
            add(f"  note: {d['note']}")
        for v, chain in d.get("chains", {}).items():
            add(f"  why {_pretty(report, v)}:")
            out.extend(f"    {c}" for c in chain)
    if "numeric" in report:
        add("restart values:")
        for k, v in report["numeric"]["states"].items():
            add(f"  {_pretty(report, k)} = {v:.12g}")
        conv = report["numeric"].get("convergence")
        if conv:
            add("eps convergence:")
            for e, err in zip(conv["eps"], conv["errors"]):
                add(f"  eps={e:g} error={err:.3e}")
            add("  orders: " + ", ".join(f"{o:.3f}" for o in conv["orders"]))
        for w in report["numeric"].get("warnings", []):
            add(_style(f"warning: {w}", fg="yellow"))
    if "error" in report:
        err = report["error"]
        add(_style(f"error ({err['type']}): {err['message']}", fg="red"))
    return "\n".join(out)


def _emit(code: int, report: dict, as_json: bool) -> None:
    color = None if os.environ.get("MDAE_COLOR", "1") != "0" else False
    if as_json:
        click.echo(json.dumps(report, indent=2, ensure_ascii=False))
    else:
        click.echo(render_text(report), color=color)
    raise SystemExit(code)


def _run(builder, as_json: bool, *args) -> None:
    try:
        code, report = builder(*args)
    except _Fail as exc:
        code, report = exc.code, exc.report
        report.setdefault("schema_version", SCHEMA_VERSION)
    _emit(code, report, as_json)


# ----------------------------------------------------------------------
# commands


json_option = click.option("--json", "as_json", is_flag=True, help="Print the JSON report.")


@click.group()
@click.version_option(package_name="artifact")
def cli() -> None:
    """Hot restart analysis for multimode DAE models."""


@cli.command()
@click.argument("model_file")
@json_option
def check(model_file: str, as_json: bool) -> None:
    """Validate a model and run the Sigma-method on every mode."""
    _run(build_check, as_json, model_file)


@cli.command()
@click.argument("model_file")
@click.option("--from", "source", required=True, help="Mode left at the switch.")
@click.option("--to", "target", required=True, help="Mode entered at the switch.")
@click.option("--height", type=click.IntRange(min=0), default=None,
              help="Force the array height instead of searching.")
@click.option("--limits", default=None,
              help="Left limits as a JSON file or inline JSON object.")
@click.option("--verify-eps", default=None,
              help="Comma-separated eps values for a convergence check (needs --limits).")
@json_option
def restart(model_file, source, target, height, limits, verify_eps, as_json) -> None:
    """Build the hot restart system of a transition, or diagnose why there is none."""
    if verify_eps and not limits:
        raise click.UsageError("--verify-eps requires --limits")
    _run(build_restart, as_json, model_file, source, target, height, limits, verify_eps)


@cli.command()
@click.argument("model_file")
@click.option("--from", "source", required=True)
@click.option("--to", "target", required=True)
@click.option("--height", type=click.IntRange(min=0), default=None)
@json_option
def explain(model_file, source, target, height, as_json) -> None:
    """Print the whole mode change array with facts, status and matching."""
    _run(build_explain, as_json, model_file, source, target, height)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="mdae", standalone_mode=False)
    except SystemExit as exc:
        return int(exc.code or 0)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
