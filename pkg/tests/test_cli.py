"""End-to-end checks of the command-line entry point and its exit codes."""

import json
from pathlib import Path
from textwrap import dedent

import pytest

from seqmultitest.cli import main

RUN_OK = """\
streams:
  - {kind: gaussian, mu: 0.6, count: 2}
budget: {kind: mistakes, k: 1, alpha: 0.1}
procedures:
  - {label: intersection, thresholds: analytic}
truths:
  - [0.0, 0.0]
  - [0.6, 0.6]
trials: 80
seed: 11
"""


def _config(tmp_path: Path, text: str, name: str = "experiment.yaml") -> str:
    path = tmp_path / name
    path.write_text(dedent(text))
    return str(path)


def test_usage_error_without_subcommand():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_run_reports_each_cell_and_writes_results(tmp_path, capsys):
    cfg = _config(tmp_path, RUN_OK)
    out = tmp_path / "results"
    assert main(["run", cfg, "--out", str(out)]) == 0
    captured = capsys.readouterr()
    lines = [l for l in captured.out.splitlines() if l.startswith("intersection")]
    assert len(lines) == 2
    assert "(analytic)" in lines[0]
    assert "truth=(0.0, 0.0)" in lines[0]
    assert "ESS=" in lines[0]
    assert "mistakes=" in lines[0]
    assert f"results written under {out}" in captured.out
    doc = json.loads((out / "results.json").read_text())
    assert len(doc["results"]) == 2


def test_run_worker_count_does_not_change_results(tmp_path, capsys):
    cfg = _config(tmp_path, RUN_OK)
    docs = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        assert main(["run", cfg, "--workers", str(workers), "--out", str(out)]) == 0
        docs.append((out / "results.json").read_text())
    capsys.readouterr()
    assert docs[0] == docs[1]


def test_run_abort_breach_exits_4(tmp_path, capsys):
    # Thresholds far beyond anything 80 steps of noise can reach.
    cfg = _config(tmp_path, """\
        streams:
          - {kind: gaussian, mu: 0.5, count: 2}
        budget: {kind: mistakes, k: 1, alpha: 0.1}
        procedures:
          - label: intersection
            thresholds: {a: 50.0, b: 50.0}
        truths:
          - [0.0, 0.0]
        trials: 40
        cap: 80
        seed: 2
        """)
    assert main(["run", cfg]) == 4
    captured = capsys.readouterr()
    assert "ESS=inf" in captured.out
    assert "abort-rate tolerance exceeded in at least one cell" in captured.err


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.yaml")]) == 2
    assert "config error: cannot read config" in capsys.readouterr().err


def test_rejected_config_exits_2(tmp_path, capsys):
    cfg = _config(tmp_path, RUN_OK + "bogus: 1\n")
    assert main(["run", cfg]) == 2
    assert "config error: config root: unknown key(s) bogus" in capsys.readouterr().err


def test_spec_problems_exit_2(tmp_path, capsys):
    cfg = _config(tmp_path, """\
        streams:
          - {kind: gaussian, mu: 0.5, count: 2}
        budget: {kind: familywise, k1: 1, k2: 1, alpha: 0.1, beta: 0.1}
        procedures:
          - {label: leap_star, thresholds: analytic}
        """)
    assert main(["run", cfg]) == 2
    err = capsys.readouterr().err
    assert "config error:" in err
    assert "leap_star" in err


def test_calibrate_writes_report(tmp_path, capsys):
    cfg = _config(tmp_path, """\
        streams:
          - {kind: gaussian, mu: 0.5, count: 3}
        budget: {kind: mistakes, k: 1, alpha: 0.1}
        procedures:
          - {label: sum_intersection, thresholds: calibrated}
          - {label: intersection, thresholds: analytic}
        trials: 500
        seed: 3
        """)
    report = tmp_path / "report.json"
    assert main(["calibrate", cfg, "--out", str(report)]) == 0
    assert f"wrote {report}" in capsys.readouterr().out
    doc = json.loads(report.read_text())
    assert set(doc) == {"config_hash", "seed", "trials", "procedures"}
    (entry,) = doc["procedures"]
    assert entry["label"] == "sum_intersection"
    assert entry["thresholds"]["b"] > 0
    assert isinstance(entry["report"], dict)


def test_calibrate_without_requests_prints_note(tmp_path, capsys):
    cfg = _config(tmp_path, RUN_OK)
    assert main(["calibrate", cfg]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["procedures"] == []
    assert "no procedure requests calibrated thresholds" in captured.err


def test_calibrate_horizon_failure_exits_3(tmp_path, capsys):
    # A 6-step horizon cannot meet a 1e-3 budget at this drift.
    cfg = _config(tmp_path, """\
        streams:
          - {kind: gaussian, mu: 0.3, count: 2}
        budget: {kind: mistakes, k: 1, alpha: 0.001}
        procedures:
          - {label: mnp, thresholds: calibrated}
        trials: 200
        seed: 1
        cap: 6
        """)
    assert main(["calibrate", cfg]) == 3
    err = capsys.readouterr().err
    assert "calibration failed: no fixed sample size within the horizon cap" in err
    assert "cap: 6" in err


def test_bounds_simple_bank(tmp_path, capsys):
    cfg = _config(tmp_path, """\
        streams:
          - {kind: gaussian, mu: 0.5, count: 4}
        budget: {kind: familywise, k1: 1, k2: 1, alpha: 0.1, beta: 0.1}
        procedures:
          - {label: leap, thresholds: analytic}
          - {label: mnp, n: 10}
        """)
    assert main(["bounds", cfg]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["J"] == 4
    assert "information" not in doc
    assert set(doc["analytic_thresholds"]) == {"leap"}
    assert doc["analytic_thresholds"]["leap"]["b"] > 0
    (slope,) = doc["first_order"]
    assert slope["truth"] == [0.0, 0.0, 0.0, 0.0]
    assert slope["first_order_ess"] > 0
    assert isinstance(slope["fixed_sample"], dict)


def test_bounds_composite_bank(tmp_path, capsys):
    cfg = _config(tmp_path, """\
        streams:
          - {kind: composite_gaussian, mu: 0.4, n0: 2, count: 2}
        budget: {kind: familywise, k1: 1, k2: 1, alpha: 0.05, beta: 0.05}
        procedures:
          - {label: leap_star, thresholds: analytic}
        """)
    assert main(["bounds", cfg]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["information"] == "composite boundary (theta in {0, mu})"
    assert set(doc["analytic_thresholds"]) == {"leap_star"}


def test_figure_smoke(tmp_path, capsys):
    out = tmp_path / "figs"
    assert main(["figure", "A.2", "--scale", "0.02", "--seed", "0",
                 "--out", str(out)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 4
    for path in printed:
        assert Path(path).exists()
    assert sorted(p.name for p in out.iterdir()) == [
        "figure_a_2_panel_a.csv", "figure_a_2_panel_a.png",
        "figure_a_2_panel_b.csv", "figure_a_2_panel_b.png",
    ]


def test_figure_unknown_id_exits_2(tmp_path, capsys):
    assert main(["figure", "Z.9", "--out", str(tmp_path)]) == 2
    assert "config error:" in capsys.readouterr().err
