import io
import json

import pandas as pd
import pytest

import kstab
from kstab_utils import render_table
from run_logger import RunLogger


def read_csv(text):
    assert text.startswith("# kstab-csv v1\n")
    return pd.read_csv(io.StringIO(text), comment="#")


def test_invariants_csv(inputs_dir, capsys):
    assert kstab.dispatch(["invariants", "--tc", str(inputs_dir / "step.json")]) == 0
    frame = read_csv(capsys.readouterr().out)
    row = frame.iloc[0]
    assert row["DF"] == pytest.approx(0.25)
    assert row["MNA"] == pytest.approx(0.25)
    assert row["ENA"] == pytest.approx(-0.125)
    assert row["JNA"] == pytest.approx(0.125)
    assert row["boundary_oracle"] == pytest.approx(0.25)


def test_invariants_json_with_explicit_base(inputs_dir, capsys):
    code = kstab.dispatch(["invariants", "--poly", str(inputs_dir / "p1.json"),
                           "--tc", str(inputs_dir / "half_step.json"), "--twist", "3", "--format", "json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["format"] == "kstab-csv v1"
    assert payload["rows"][0]["DF"] == pytest.approx(0.375)
    assert payload["rows"][0]["correction"] == pytest.approx(-0.25)
    assert payload["rows"][0]["twist_C_used"] == 3.0


def test_polytope_report(inputs_dir, capsys):
    assert kstab.dispatch(["polytope", "--poly", str(inputs_dir / "f1.json")]) == 0
    row = read_csv(capsys.readouterr().out).iloc[0]
    assert row["volume"] == pytest.approx(1.5)
    assert row["volume_exact"] == "3/2"
    assert bool(row["delzant"])
    assert row["Sbar"] == pytest.approx(10 / 3)
    assert sorted(row["facet_lattice_volumes"].split()) == ["1", "1", "1", "2"]


def test_output_file_and_suffix(inputs_dir, tmp_path):
    out = tmp_path / "nested" / "inv.json"
    assert kstab.dispatch(["invariants", "--tc", str(inputs_dir / "linear.json"), "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["rows"][0]["DF"] == pytest.approx(0.0)


def test_ray_profile_and_dump(inputs_dir, tmp_path, capsys):
    dump = tmp_path / "ray.bin"
    code = kstab.dispatch(["ray", "--tc", str(inputs_dir / "step.json"), "--t-max", "4", "--grid", "257",
                           "--functional", "E", "--dump", str(dump)])
    assert code == 0
    frame = read_csv(capsys.readouterr().out)
    assert list(frame.columns) == ["functional", "t", "value", "err"]
    assert list(frame["t"]) == [0.0, 1.0, 2.0, 4.0]
    assert frame["value"].iloc[0] == pytest.approx(0.0, abs=1e-10)
    assert frame["value"].iloc[-1] == pytest.approx(-0.5, abs=0.02)
    assert dump.stat().st_size > 0


def test_slope_command(inputs_dir, capsys):
    code = kstab.dispatch(["slope", "--tc", str(inputs_dir / "step.json"), "--t-max", "8", "--grid", "513",
                           "--functional", "J", "--tol", "0.05"])
    assert code == 0
    row = read_csv(capsys.readouterr().out).iloc[0]
    assert row["functional"] == "J"
    assert row["target"] == pytest.approx(0.125)


def test_verify_twist_suite(capsys):
    assert kstab.dispatch(["verify", "--suite", "twist"]) == 0
    frame = read_csv(capsys.readouterr().out)
    assert list(frame.columns) == ["suite", "case", "lhs", "rhs", "abs_diff", "tol", "pass", "note"]
    assert frame["pass"].all()
    assert set(frame["suite"]) == {"twist"}


def test_verify_exit_codes(inputs_dir, tmp_path, capsys):
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"cases": [{"name": "step", "poly": str(inputs_dir / "p1.json"),
                                          "tc": str(inputs_dir / "step.json")}], "degrees": [2]}))
    assert kstab.dispatch(["verify", "--suite", "basechange", "--config", str(run)]) == 0
    capsys.readouterr()
    # a fitted growth exponent never matches to 1e-12
    code = kstab.dispatch(["verify", "--suite", "growth", "--config", str(run), "--t-max", "8", "--grid", "257",
                           "--tol", "1e-12"])
    assert code == 2
    frame = read_csv(capsys.readouterr().out)
    assert not frame["pass"].all()


def test_scan_finds_negative_df(inputs_dir, capsys):
    code = kstab.dispatch(["scan", "--poly", str(inputs_dir / "f1.json"), "--slopes", str(inputs_dir / "lin.json"),
                           "--samples", "8", "--seed", "7", "--threads", "2"])
    assert code == 0
    frame = read_csv(capsys.readouterr().out)
    assert list(frame.columns) == ["tc_id", "kind", "pieces", "DF", "MNA", "JNA", "ratio"]
    assert len(frame) == 4 + 8
    assert frame["DF"].min() < 0


def test_bad_polytope_is_a_validation_error(tmp_path):
    poly = tmp_path / "bad.json"
    poly.write_text(json.dumps({"dim": 2, "facets": [{"normal": [1, 0], "support": 0}]}))
    assert kstab.dispatch(["polytope", "--poly", str(poly)]) == 1
    assert kstab.dispatch(["polytope", "--poly", str(tmp_path / "missing.json")]) == 1


def test_usage_errors_exit_with_one():
    assert kstab.dispatch(["verify", "--suite", "theoremD"]) == 1
    assert kstab.dispatch([]) == 1
    assert kstab.dispatch(["invariants"]) == 1


def test_help_lists_suites_and_global_options(capsys):
    assert kstab.dispatch(["--help"]) == 0
    text = capsys.readouterr().out
    for name in ("theoremB", "theoremC", "weakC", "basechange", "twist", "growth"):
        assert name in text
    for flag in ("--grid", "--t-max", "--tol", "--out", "--format", "--seed", "--threads", "--settings"):
        assert flag in text


def test_verify_appends_to_the_run_log(tmp_path, capsys):
    log_file = tmp_path / "runs.jsonl"
    settings = tmp_path / "kstab.yaml"
    settings.write_text(f"run_log: {log_file}\n")
    assert kstab.dispatch(["verify", "--suite", "twist", "--settings", str(settings)]) == 0
    capsys.readouterr()
    runs = RunLogger(str(log_file)).get_recent_runs()
    assert len(runs) == 1
    assert runs[0].status == "PASSED" and runs[0].suite == "twist"
    assert runs[0].rows_total > 0 and runs[0].rows_failed == 0
    assert "p1-step" in runs[0].cases


def test_bad_settings_file(tmp_path):
    settings = tmp_path / "kstab.yaml"
    settings.write_text("threads: 0\n")
    assert kstab.dispatch(["verify", "--suite", "twist", "--settings", str(settings)]) == 1


def test_render_table_json_keeps_columns():
    frame = pd.DataFrame([{"b": 1.5, "a": "x"}])
    payload = json.loads(render_table(frame, "json"))
    assert payload["columns"] == ["b", "a"]
    assert payload["rows"] == [{"b": 1.5, "a": "x"}]
