import json
import subprocess
import sys
from pathlib import Path

import pytest

from caterpillars import __version__
from caterpillars.cli import build_parser, config_tokens, main
from caterpillars.montecarlo import read_csv_table

GOLDEN = Path(__file__).parent / "golden"
COMMANDS = ["rates", "theory", "totals", "trajectory", "verify", "variance"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def body(out):
    return [line for line in out.splitlines() if not line.startswith("# ")]


# --- help -----------------------------------------------------------------


@pytest.mark.parametrize("name", ["", *COMMANDS])
def test_help_matches_golden(name, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    with pytest.raises(SystemExit) as exc:
        main([name, "--help"] if name else ["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert out == (GOLDEN / f"help_{name or 'main'}.txt").read_text()


@pytest.mark.parametrize("name", COMMANDS)
def test_help_lists_every_flag(name, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    sub = build_parser()._subparsers._group_actions[0].choices[name]
    text = sub.format_help()
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert capsys.readouterr().out.strip() == f"caterpillars {__version__}"


# --- usage and numeric errors ---------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [
        ["totals", "--n", "100", "--bogus"],
        ["totals"],
        ["nosuch"],
        [],
        ["theory", "--table", "other"],
        ["totals", "--n", "50", "--workers", "0"],
    ],
)
def test_usage_errors_exit_two(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["totals", "--measure", "kind=weird", "--n", "50", "--replicas", "2"],
        ["theory", "--alpha", "2.5"],
        ["totals", "--n", "5", "--r", "9", "--replicas", "2", "--measure", "kind=kingman", "--workers", "1"],
        ["verify", "--small-n", "99"],
        ["variance", "--n", "100", "1000", "--replicas", "4", "--workers", "1"],
    ],
)
def test_numeric_errors_exit_three(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 3
    assert err.startswith(f"caterpillars {argv[0]}: ")


# --- subcommands ----------------------------------------------------------


def test_theory_limit_row(capsys):
    code, out, _ = run(capsys, "theory", "--alpha", "1.5", "--r", "2")
    assert code == 0
    rows = body(out)
    assert rows[0] == "alpha,r,limit_constant"
    alpha, r, c = rows[1].split(",")
    assert (alpha, r) == ("1.5", "2") and float(c) == pytest.approx(0.1875, rel=1e-14)


def test_theory_curves_table(capsys):
    code, out, _ = run(capsys, "theory", "--alpha", "1.5", "--table", "curves", "--r", "2", "--t", "1.0")
    assert code == 0
    rows = body(out)
    assert rows[0] == "alpha,r,t,x_r,x_up_r"
    vals = [float(v) for v in rows[1].split(",")]
    assert vals[3] == pytest.approx(0.046875, rel=1e-15)


def test_totals_kingman_theory_column(capsys):
    code, out, _ = run(
        capsys, "totals", "--measure", "kind=kingman", "--n", "2000", "--replicas", "100", "--r", "2", "--workers", "1"
    )
    assert code == 0
    rows = body(out)
    assert rows[0].split(",")[:4] == ["n", "r", "t", "mean"]
    fields = dict(zip(rows[0].split(","), rows[1].split(",")))
    assert fields["target"].startswith("0.333333")
    assert abs(float(fields["mean"]) - 1 / 3) < 0.02


def test_totals_raw_rows_and_tolerance(capsys):
    code, out, _ = run(
        capsys, "totals", "--measure", "kind=kingman", "--n", "100", "--replicas", "3", "--r", "2", "3",
        "--raw", "--workers", "1",
    )
    assert code == 0
    rows = body(out)
    assert rows[0] == "n,r,xi_r,replica,seed" and len(rows) == 1 + 6
    code, _, err = run(
        capsys, "totals", "--measure", "kind=kingman", "--n", "20", "--replicas", "2", "--r", "2",
        "--tolerance", "1e-9", "--workers", "1",
    )
    assert code == 1 and err


def test_trajectory_raw_columns(capsys):
    code, out, _ = run(
        capsys, "trajectory", "--n", "200", "--replicas", "2", "--t", "0.5", "1.0", "--r-max", "2", "--raw",
        "--workers", "1",
    )
    assert code == 0
    rows = body(out)
    assert rows[0] == "t_scaled,r,X_r,replica,n"
    assert len(rows) == 1 + 2 * 2 * 3


def test_rates_dump_and_report(capsys, tmp_path):
    report = tmp_path / "report.csv"
    code, out, _ = run(capsys, "rates", "--b", "4", "--validate-b", "100", "1000", "10000", "--report", str(report))
    assert code == 0
    assert body(out)[0] == "b,k,lambda_bk,log_block_rate" and len(body(out)) == 1 + 3
    header, rows = read_csv_table(report)
    assert {row["check"] for row in rows} >= {"total_rate", "first_moment", "second_moment"}


def test_verify_fast_passes(capsys):
    code, out, err = run(capsys, "verify", "--small-n", "5", "--runs", "50", "--fast")
    assert code == 0
    assert "FAIL" not in err and err.count("PASS") >= 5


# --- output files and config ----------------------------------------------


def test_output_file_header_is_self_describing(tmp_path, capsys):
    path = tmp_path / "t.csv"
    argv = ["totals", "--measure", "kind=beta alpha=1.5", "--n", "100", "--replicas", "3", "--seed", "17",
            "--output", str(path), "--workers", "1"]
    assert run(capsys, *argv)[0] == 0
    header, rows = read_csv_table(path)
    assert header["tool"] == "caterpillars" and header["version"] == __version__
    assert header["measure"] == "kind=beta alpha=1.5" and header["seed"] == "17"
    first = path.read_bytes()
    assert run(capsys, *argv)[0] == 0
    assert path.read_bytes() == first


def test_jsonl_format(capsys):
    code, out, _ = run(capsys, "theory", "--alpha", "2", "--r", "2", "3", "--format", "jsonl")
    lines = [json.loads(line) for line in out.splitlines()]
    assert lines[0]["header"]["command"] == "theory"
    assert [row["r"] for row in lines[1:]] == [2, 3]
    assert lines[1]["limit_constant"] == pytest.approx(1 / 3)


def test_config_tokens():
    text = "# comment\nmeasure = kind=beta alpha=1.25\nn = 100 200\nraw = true\nfast = false\nr_max = 3\n"
    assert config_tokens(text) == ["--measure", "kind=beta alpha=1.25", "--n", "100", "200", "--raw", "--r-max", "3"]
    with pytest.raises(ValueError):
        config_tokens("no equals sign")


def test_config_file_with_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("measure = kind=kingman\nn = 60\nreplicas = 2\nr = 2\nseed = 5\n")
    code, out, _ = run(capsys, "totals", "--config", str(cfg), "--seed", "9", "--workers", "1")
    assert code == 0
    assert "# measure=kind=kingman\n" in out and "# seed=9" in out and "# replicas=2" in out
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    with pytest.raises(SystemExit) as exc:
        main(["totals", "--n", "50", "--config", str(bad)])
    assert exc.value.code == 2


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "caterpillars.cli", "theory", "--alpha", "2", "--r", "4"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert float(proc.stdout.splitlines()[-1].split(",")[-1]) == pytest.approx(1 / 15)
