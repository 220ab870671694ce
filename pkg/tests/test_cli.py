import csv
import json

import pytest

from dualdep.cli import _parse_grid, main
from dualdep.exceptions import ValidationError

Q1_CSV = "stratum,x11,x10,x01\nSmall & medium,100,8900,3641\nLarge,534,2584,3780\n"


@pytest.fixture
def q1_csv(tmp_path):
    path = tmp_path / "q1.csv"
    path.write_text(Q1_CSV, encoding="utf-8")
    return path


def read_report(stem):
    return json.loads(stem.with_name(stem.name + ".report.json").read_text(encoding="utf-8"))


def test_diagnose_text_and_files(q1_csv, capsys):
    assert main(["diagnose", "--input", str(q1_csv)]) == 0
    out = capsys.readouterr().out
    assert "0.0111" in out and "0.1713" in out
    assert "336,690" in out and "25,189" in out and "153,960" in out
    report = read_report(q1_csv.with_suffix(""))
    strata = report["results"]["strata"]
    assert strata[0]["naive"] == 336690.0
    assert round(strata[1]["c_hat"], 4) == 0.1713
    assert report["results"]["flags"] == []
    assert report["manifest"]["output_digest"].startswith("sha256:")
    csv_path = q1_csv.with_suffix("").with_name("q1.summary.csv")
    with csv_path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["stratum", "c_hat", "p_hat", "naive"]
    assert len(rows) == 4  # header, two strata, pooled


def test_diagnose_three_strata_is_error(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text(Q1_CSV + "Extra,1,2,3\n", encoding="utf-8")
    assert main(["diagnose", "--input", str(path)]) == 2
    assert "exactly two strata" in capsys.readouterr().err


def test_diagnose_bias_approximation(q1_csv, capsys):
    code = main(
        ["diagnose", "--input", str(q1_csv), "--phi", "1.0", "--p", "0.2", "--p1dot", "0.5", "--N", "1000"]
    )
    assert code == 0
    assert "ordinary" not in capsys.readouterr().err
    report = read_report(q1_csv.with_suffix(""))
    assert report["results"]["bias_approximation"] == 4.0


def test_diagnose_partial_bias_args_usage_error(q1_csv, capsys):
    assert main(["diagnose", "--input", str(q1_csv), "--phi", "0.5"]) == 2
    assert "--p1dot" in capsys.readouterr().err


def test_estimate_bootstrap_needs_positive_B(q1_csv, capsys):
    code = main(["estimate", "--input", str(q1_csv), "--B", "0", "--se", "bootstrap"])
    assert code == 2
    assert "B must be >= 1 for bootstrap" in capsys.readouterr().err


def test_estimate_small_run(q1_csv, capsys):
    code = main(
        ["estimate", "--input", str(q1_csv), "--mode", "reduced", "--se", "both",
         "--B", "25", "--seed", "20180331"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "converged=True" in out
    report = read_report(q1_csv.with_suffix(""))
    fit_block = report["results"]["fit"]
    assert fit_block["converged"] is True
    assert fit_block["params"]["N_A"] == pytest.approx(54620, rel=0.05)
    assert fit_block["params"]["alpha"] == pytest.approx(0.0690, abs=0.01)
    unc = report["results"]["uncertainty"]
    assert unc["B"] == 25
    assert unc["n_failed_replicates"] == 0
    assert unc["se_hessian"]["p1"] == pytest.approx(0.0077, rel=0.5)
    lo, hi = unc["ci"]["bootstrap"]["N_total"]
    assert lo < fit_block["params"]["N_total"] < hi


def test_estimate_seeded_runs_identical_but_timestamp(q1_csv):
    args = ["estimate", "--input", str(q1_csv), "--se", "bootstrap", "--B", "10", "--seed", "7"]
    assert main(args) == 0
    first = read_report(q1_csv.with_suffix(""))
    assert main(args) == 0
    second = read_report(q1_csv.with_suffix(""))
    ts1 = first["manifest"].pop("timestamp")
    ts2 = second["manifest"].pop("timestamp")
    assert first == second
    assert first["manifest"]["output_digest"] == second["manifest"]["output_digest"]
    assert isinstance(ts1, str) and isinstance(ts2, str)


def test_estimate_json_roundtrip_idempotent(q1_csv):
    assert main(["estimate", "--input", str(q1_csv), "--se", "hessian", "--B", "1"]) == 0
    path = q1_csv.with_suffix("").with_name("q1.report.json")
    text = path.read_text(encoding="utf-8")
    reparsed = json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"
    assert reparsed == text


def test_estimate_full_mode(q1_csv):
    assert main(["estimate", "--input", str(q1_csv), "--mode", "full", "--se", "hessian"]) == 0
    report = read_report(q1_csv.with_suffix(""))
    assert report["results"]["fit"]["mode"] == "full"
    assert report["results"]["fit"]["size_ratio_gap"] < 1e-3


def test_simulate_study1_cli(tmp_path, capsys):
    stem = tmp_path / "s1"
    code = main(
        ["simulate", "study1", "--replicates", "8", "--seed", "1", "--output", str(stem)]
    )
    assert code == 0
    report = read_report(stem)
    assert report["command"] == "study1"
    summaries = report["results"]["summaries"]
    assert {s["estimator"] for s in summaries} == {"naive", "proposed"}
    assert len(summaries) == 8  # 2 naive + 6 proposed quantities
    with (tmp_path / "s1.summary.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "estimator"
    assert len(rows) == 9


def test_simulate_study2_cli(tmp_path):
    stem = tmp_path / "sweep"
    code = main(
        ["simulate", "study2", "--scenario", "1", "--grid", "0.14:0.16:0.02",
         "--replicates", "5", "--seed", "3", "--output", str(stem)]
    )
    assert code == 0
    report = read_report(stem)
    assert report["results"]["grid"] == [0.14, 0.16]
    assert len(report["results"]["rows"]) == 2 * 2 * 3  # grid x estimator x quantity


def test_simulate_coverage_cli(tmp_path):
    stem = tmp_path / "cov"
    code = main(
        ["simulate", "coverage", "--replicates", "6", "--seed", "5", "--output", str(stem)]
    )
    assert code == 0
    report = read_report(stem)
    assert len(report["results"]["rows"]) == 4
    for row in report["results"]["rows"]:
        assert 0.0 <= row["coverage"] <= 1.0


def test_simulate_custom_cli(tmp_path, capsys):
    stem = tmp_path / "indep"
    code = main(
        ["simulate", "custom", "--NA", "3000", "--NB", "1500", "--alpha", "0",
         "--p1A", "0.2", "--p2A", "0.15", "--p2B", "0.25",
         "--replicates", "8", "--seed", "2", "--output", str(stem)]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "~0 bias" in out  # independence flags near-zero bias rows
    report = read_report(stem)
    assert report["results"]["config"]["alpha"] == 0.0


def test_estimate_nonconvergence_exit_code(q1_csv, monkeypatch, capsys):
    from dualdep import cli
    from dualdep.exceptions import NonConvergenceError
    from dualdep.mle import StartDiagnostics
    from dualdep.model import ModelParams

    diag = StartDiagnostics(
        start=ModelParams(20000, 8000, 0.05, 0.2, 0.1, 0.2),
        log_likelihood=-1.0, projected_gradient=0.5,
        converged=False, iterations=3, message="stalled",
    )
    def explode(data, options):
        raise NonConvergenceError("no starting point reached gradient tolerance", [diag])

    monkeypatch.setattr(cli.mle, "fit", explode)
    code = main(["estimate", "--input", str(q1_csv), "--se", "hessian"])
    assert code == 1
    err = capsys.readouterr().err
    assert "gradient tolerance" in err
    assert "stalled" in err  # per-start diagnostics are printed


def test_thread_cap_env_var(monkeypatch):
    from dualdep.cli import _default_threads, build_parser

    monkeypatch.setenv("DUALDEP_THREADS", "4")
    assert _default_threads() == 4
    args = build_parser().parse_args(["simulate", "study1", "--replicates", "2"])
    assert args.threads == 4
    monkeypatch.setenv("DUALDEP_THREADS", "not-a-number")
    assert _default_threads() == 1


def test_parse_grid():
    assert _parse_grid("0.01:0.35:0.01") == pytest.approx(tuple(k / 100 for k in range(1, 36)))
    assert _parse_grid("0.2") == (0.2,)
    with pytest.raises(ValidationError):
        _parse_grid("0.1:0.2")
    with pytest.raises(ValidationError):
        _parse_grid("0.1:0.2:0.03")
    with pytest.raises(ValidationError):
        _parse_grid("a:b:c")


def test_bad_grid_is_usage_error(tmp_path, capsys):
    code = main(["simulate", "study2", "--scenario", "1", "--grid", "0.1:0.2",
                 "--replicates", "2", "--output", str(tmp_path / "x")])
    assert code == 2
    assert "grid" in capsys.readouterr().err
