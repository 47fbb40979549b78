import json

import click
import pytest
from click.testing import CliRunner

from mdae.cli import (EXIT_DIAGNOSIS, EXIT_OK, EXIT_STRUCTURAL, EXIT_USAGE, SCHEMA_VERSION, cli,
                      main, render_text)


@pytest.fixture
def path(corpus):
    return lambda name: str(corpus / name / "model.mdae")


def run_json(capsys, argv):
    code = main(argv + ["--json"])
    out = capsys.readouterr().out
    return code, json.loads(out)


def test_restart_ok(capsys, path):
    code, rep = run_json(capsys, ["restart", path("cup_and_ball"), "--from", "free", "--to", "straight"])
    assert code == EXIT_OK
    assert rep["schema_version"] == SCHEMA_VERSION and rep["command"] == "restart"
    assert rep["outcome"] == "restart"
    assert set(rep["restart"]["equations"]) == {"e1", "e2", "k1'@1", "cont[x]", "cont[y]"}
    assert rep["heights"]["lower"] == rep["heights"]["upper"]
    assert rep["facts"] == ["k1", "k1@1"]


def test_restart_with_limits_and_convergence(capsys, path, corpus):
    limits = str(corpus / "cup_and_ball" / "limits.json")
    code, rep = run_json(capsys, ["restart", path("cup_and_ball"), "--from", "free", "--to",
                                  "straight", "--limits", limits, "--verify-eps", "1e-2,1e-3,1e-4"])
    assert code == EXIT_OK
    states = rep["numeric"]["states"]
    assert states["post(der(x))"] == pytest.approx(0.88)
    assert states["post(der(y))"] == pytest.approx(0.66)
    assert rep["numeric"]["warnings"] == []
    conv = rep["numeric"]["convergence"]
    assert conv["decreasing"] and min(conv["orders"]) > 0.9


def test_inline_limits_with_parameter_override(capsys, path):
    lim = json.dumps({"w1": 3, "w2": 0, "params": {"J1": 2, "J2": 1}})
    code, rep = run_json(capsys, ["restart", path("clutch"), "--from", "released", "--to",
                                  "engaged", "--limits", lim])
    assert code == EXIT_OK
    # (J1 + J2) w+ = J1 w1- + J2 w2-
    assert rep["numeric"]["states"]["post(w1)"] == pytest.approx(2.0)


def test_diagnosis_exit_code(capsys, path):
    code, rep = run_json(capsys, ["restart", path("cup_and_ball"), "--from", "free", "--to",
                                  "straight", "--height", "2"])
    assert code == EXIT_DIAGNOSIS
    assert rep["outcome"] == "diagnosis"
    assert sorted(rep["diagnosis"]["violations"]["renamable"]) == [
        "shift(der(x,2),1)", "shift(der(y,2),1)"]


def test_structural_exit_codes(capsys, path):
    code, rep = run_json(capsys, ["check", path("underdetermined")])
    assert code == EXIT_STRUCTURAL and rep["findings"][0]["kind"] == "under-determined"
    code, rep = run_json(capsys, ["restart", path("cup_and_ball"), "--from", "free", "--to",
                                  "straight", "--height", "0"])
    assert code == EXIT_STRUCTURAL
    assert rep["error"]["type"] == "NoAdmissibleMatching"


def test_check_ok(capsys, path):
    code, rep = run_json(capsys, ["check", path("circuit")])
    assert code == EXIT_OK and rep["ok"]
    assert rep["modes"]["closed"]["d"] == {"i": 1, "v1": 2, "v2": 1, "vR": 0}


@pytest.mark.parametrize("argv", [
    ["check", "/nonexistent/model.mdae"],
    ["restart", "{m}", "--from", "straight", "--to", "free"],
    ["restart", "{m}", "--to", "straight"],
    ["restart", "{m}", "--from", "free", "--to", "straight", "--verify-eps", "0.1"],
    ["restart", "{m}", "--from", "free", "--to", "straight", "--limits", "{not json"],
    ["frobnicate"],
])
def test_usage_errors(capsys, path, argv):
    argv = [a.replace("{m}", path("cup_and_ball")) if a == "{m}" else a for a in argv]
    assert main(argv) == EXIT_USAGE


def test_json_is_deterministic(capsys, path):
    argv = ["explain", path("clutch"), "--from", "released", "--to", "engaged", "--json"]
    main(argv)
    first = capsys.readouterr().out
    main(argv)
    assert capsys.readouterr().out == first


def test_explain_rows(capsys, path):
    code, rep = run_json(capsys, ["explain", path("cup_and_ball"), "--from", "free", "--to", "straight"])
    assert code == EXIT_OK
    statuses = [r["status"] for r in rep["rows"]]
    assert statuses.count("euler") == 2 and statuses[-2:] == ["euler", "euler"]
    assert statuses.count("fact") == 2 and statuses.count("disabled") == 2


def test_text_is_rendered_from_json(capsys, path):
    code, rep = run_json(capsys, ["restart", path("cup_and_ball"), "--from", "free", "--to", "straight"])
    main(["restart", path("cup_and_ball"), "--from", "free", "--to", "straight"])
    text = capsys.readouterr().out
    assert text.rstrip("\n") == click.unstyle(render_text(rep))
    assert "λ↓" in text and "x⁺" in text


def test_color_switch(path):
    runner = CliRunner()
    args = ["restart", path("cup_and_ball"), "--from", "free", "--to", "straight", "--height", "2"]
    colored = runner.invoke(cli, args, color=True)
    plain = runner.invoke(cli, args, color=True, env={"MDAE_COLOR": "0"})
    assert colored.exit_code == plain.exit_code == EXIT_DIAGNOSIS
    assert "\x1b[" in colored.output
    assert "\x1b[" not in plain.output


def test_inconsistent_limits_warn(capsys, path):
    lim = json.dumps({"x": 0.6, "y": -0.7, "der(x)": 1, "der(y)": 0.5})
    code, rep = run_json(capsys, ["restart", path("cup_and_ball"), "--from", "free", "--to",
                                  "straight", "--limits", lim])
    assert code == EXIT_OK
    assert any("fact k1" in w for w in rep["numeric"]["warnings"])
