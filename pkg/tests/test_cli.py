import json
import subprocess
import sys
import textwrap

import pytest

from fiogroup.cli import main
from fiogroup.scenario import (RunOptions, ScenarioError, bundled_scenarios, emit_report,
                               load_scenario, parse_machine_report, resolve_scenario_path,
                               run_scenario)


def _write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def test_bundled_scenarios_listed(capsys):
    names = bundled_scenarios()
    assert {"empty", "parametrix-demo", "nonelliptic"} <= set(names)
    assert main(["--list-scenarios"]) == 0
    assert "parametrix-demo" in capsys.readouterr().out


def test_empty_scenario_passes_with_header_only(capsys):
    assert main(["--scenario", "empty"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2
    assert "overall: PASS" in out[0]
    assert all(line == line.rstrip() for line in out)


def test_parametrix_demo_passes():
    report = run_scenario(resolve_scenario_path("parametrix-demo"))
    assert report.passed
    for r in report.results:
        if r.op == "parametrix":
            assert r.residual <= 1e-9


def test_nonelliptic_fails_with_exit_one(capsys):
    assert main(["--scenario", "nonelliptic"]) == 1
    out = capsys.readouterr().out
    assert "EllipticityError" in out
    report = run_scenario(resolve_scenario_path("nonelliptic"))
    assert [r.status for r in report.results] == ["pass", "fail"]


def test_fail_fast_stops_early(tmp_path):
    p = _write(tmp_path, """
        version: 1
        model: {dim: 1, depth: 1}
        definitions:
          bad: {role: symbol, components: ["exp(-x1^2)", "0"]}
          good: {role: symbol, components: ["2 + sin(x1)", "0"]}
        commands:
          - {op: parametrix, args: [bad]}
          - {op: parametrix, args: [good]}
        """)
    assert len(run_scenario(p).results) == 2
    assert len(run_scenario(p, RunOptions(fail_fast=True)).results) == 1


def test_machine_report_round_trip():
    report = run_scenario(resolve_scenario_path("parametrix-demo"))
    text = emit_report(report, "machine")
    back = parse_machine_report(text)
    assert emit_report(back, "machine") == text
    assert emit_report(back, "text") == emit_report(report, "text")


def test_text_and_machine_carry_identical_numbers():
    report = run_scenario(resolve_scenario_path("parametrix-demo"))
    data = json.loads(emit_report(report, "machine"))
    text = emit_report(report, "text")
    for row in data["commands"]:
        assert repr(row["residual"]) in text
        assert repr(row["tolerance"]) in text


def test_unknown_report_format():
    with pytest.raises(ValueError):
        emit_report(run_scenario(resolve_scenario_path("empty")), "xml")


def test_output_is_deterministic(capsys):
    outs = []
    for _ in range(2):
        main(["--scenario", "parametrix-demo", "--report-format", "machine", "--seed", "3"])
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert json.loads(outs[0])["seed"] == 3


def test_console_script_matches_module(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fiogroup.cli", "--scenario", "empty",
                           "--report-format", "machine"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["passed"] is True


def test_tol_scale_tightens_checks(tmp_path):
    p = _write(tmp_path, """
        version: 1
        model: {dim: 1, depth: 2}
        definitions:
          a: {role: symbol, components: ["1 + 0.5*exp(-x1^2)*xi1/norm_xi",
                                         "0.3*exp(-x1^2)/norm_xi", "0"]}
          b: {role: symbol, components: ["2 + 0.5*sin(x1)*xi1/norm_xi",
                                         "0.4*cos(x1)*xi1/norm_xi^2", "0"]}
        commands:
          - {op: composition_oracle, args: [a, b], depth: 0}
        """)
    row = run_scenario(p).results[0]
    assert row.passed and row.residual > 0.01
    tight = run_scenario(p, RunOptions(tol_scale=0.01 / row.tolerance)).results[0]
    assert tight.status == "fail" and tight.tolerance == pytest.approx(0.01)


@pytest.mark.parametrize("body,message", [
    ("commands:\n  - {op: parametrix, args: [nope]}\n", "unresolved reference"),
    ("commands:\n  - {op: frobnicate}\n", "unknown operation"),
    ("definitions:\n  a: {role: symbol, components: ['xi1']}\n", "not homogeneous"),
    ("definitions:\n  h: {role: hamiltonian, expr: 'x1'}\n", "degree 1"),
    ("definitions:\n  a: {role: symbol, components: ['x1 +']}\n", "unexpected end"),
    ("version: 9\n", "schema version"),
])
def test_scenario_errors(tmp_path, capsys, body, message):
    p = _write(tmp_path, "model: {dim: 1}\n" + body)
    with pytest.raises(ScenarioError, match=message):
        load_scenario(p)
    assert main(["--scenario", str(p)]) == 2
    assert message in capsys.readouterr().err


def test_missing_scenario_argument(capsys):
    assert main([]) == 2


def test_experimental_depth_flag(tmp_path):
    p = _write(tmp_path, """
        version: 1
        model: {dim: 1, depth: 1}
        definitions:
          s: {role: diffeo, kind: translation, shift: [0.3]}
          a: {role: symbol, components: ["2 + sin(x1)", "0.1*cos(x1)/norm_xi"]}
          e1: {role: element, diffeo: s}
          e2: {role: element, symbol: a}
        commands:
          - {op: group_axioms, args: [e1, e2], count: 4}
        """)
    row = run_scenario(p).results[0]
    assert row.status == "fail" and "ExperimentalDepthError" in row.message
    row = run_scenario(p, RunOptions(experimental_depth=True)).results[0]
    assert row.status in ("pass", "fail") and "ExperimentalDepthError" not in row.message


def test_contact_scenario_passes():
    assert run_scenario(resolve_scenario_path("contact-demo")).passed


def test_oracle_scenario_passes():
    assert run_scenario(resolve_scenario_path("oracle-demo")).passed


def test_grid_flag_changes_quadrature(capsys):
    assert main(["--scenario", "oracle-demo", "--grid", "1024"]) == 0


def test_timings_column():
    report = run_scenario(resolve_scenario_path("parametrix-demo"), RunOptions(timings=True))
    assert all(r.wall_time is not None for r in report.results)
    assert "wall_s" in emit_report(report, "text")
