import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from phackpower import cli
from phackpower.cli import ENV_OUTPUT_DIR, main


def write_pvalues(path, p, header=True):
    with open(path, "w") as fh:
        if header:
            fh.write("p\n")
        fh.writelines(f"{float(v)!r}\n" for v in p)
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "study.yaml"
    path.write_text(
        "dgp: {scenario: lag}\nstrategy: threshold\ntau_grid: [0.0, 1.0]\nmc_reps: 5\npool_reps: 2000\n"
        "tests: [binomial, CS1]\n"
    )
    return path


class TestTestCommand:
    def test_outputs(self, tmp_path, capsys):
        p = np.random.default_rng(0).random(3000)
        src = write_pvalues(tmp_path / "p.csv", p)
        out, diag = tmp_path / "r.csv", tmp_path / "d.jsonl"
        code = main(["test", str(src), "--tests", "binomial,CS1,lcm", "--out", str(out), "--diagnostics", str(diag)])
        assert code == 0
        rows = list(csv.DictReader(open(out)))
        assert [r["test"] for r in rows] == ["binomial", "CS1", "lcm"]
        meta = [json.loads(line) for line in diag.read_text().splitlines()]
        assert meta[1]["test"] == "CS1" and meta[1]["n"] == 3000

    def test_stdout(self, tmp_path, capsys):
        src = write_pvalues(tmp_path / "p.csv", [0.042] * 3 + [0.047] * 7, header=False)
        assert main(["test", str(src), "--tests", "binomial"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("test,statistic") and out[1].startswith("binomial,7.0,0.171875")

    def test_scope_flag(self, tmp_path, capsys):
        p = np.random.default_rng(1).random(3000)
        src = write_pvalues(tmp_path / "p.csv", p)
        main(["test", str(src), "--tests", "CS1", "--scope", "window", "--diagnostics", str(tmp_path / "d")])
        assert json.loads((tmp_path / "d").read_text())["n"] == int(np.sum(p <= 0.15))

    @pytest.mark.parametrize("args", [["--tests", "ttest"], ["--binomial-bins", "0.1,0.2"]])
    def test_bad_arguments_exit_2(self, tmp_path, args):
        src = write_pvalues(tmp_path / "p.csv", [0.1, 0.2])
        assert main(["test", str(src), *args]) == 2

    def test_bad_values_exit_2(self, tmp_path, capsys):
        src = tmp_path / "p.csv"
        src.write_text("p\n0.1\nabc\n")
        assert main(["test", str(src)]) == 2
        assert "line 3" in capsys.readouterr().err
        src.write_text("1.5\n")
        assert main(["test", str(src)]) == 2

    def test_argparse_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["test"])
        assert exc.value.code == 2


class TestPowerCommand:
    def test_env_output_dir(self, tmp_path, config_file, monkeypatch, capsys):
        out = tmp_path / "env_out"
        monkeypatch.setenv(ENV_OUTPUT_DIR, str(out))
        assert main(["power", str(config_file), "--plot"]) == 0
        csvs, svgs = list(out.glob("*.csv")), list(out.glob("*.svg"))
        assert len(csvs) == 1 and len(svgs) == 1
        assert csvs[0].name == "power_lag_K3_two_threshold_g2s_h0_none.csv"

    def test_flag_beats_env(self, tmp_path, config_file, monkeypatch, capsys):
        monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path / "env"))
        assert main(["power", str(config_file), "--output-dir", str(tmp_path / "flag")]) == 0
        assert list((tmp_path / "flag").glob("*.csv")) and not (tmp_path / "env").exists()

    def test_config_error_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("dgp: {scenario: lag}\nstrategy: threshold\nwhat: 1\n")
        assert main(["power", str(bad)]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_budget_exit_3(self, tmp_path, config_file, monkeypatch, capsys):
        from phackpower.battery import TestResult
        from phackpower import harness

        monkeypatch.setattr(harness, "run_battery", lambda p, tests, s: [
            TestResult(t, float("nan"), False, flags=("qp_singular_nonreject",)) for t in tests])
        assert main(["power", str(config_file), "--output-dir", str(tmp_path)]) == 3
        assert list(tmp_path.glob("power_*.csv"))


class TestOtherCommands:
    def test_simulate_pool(self, tmp_path, capsys):
        code = main(["simulate-pool", "--scenario", "lag", "--reps", "500", "--output-dir", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "pool_lag_threshold_g2s_h0_seed0.bin").exists()

    def test_analytic_curves(self, tmp_path, capsys):
        code = main(["analytic-curves", "--scenario", "covariate", "--h", "0,1", "--step", "0.01",
                     "--output-dir", str(tmp_path)])
        assert code == 0
        rows = list(csv.reader(open(tmp_path / "curves_covariate.csv")))
        assert len(rows) > 50

    def test_size_bias(self, tmp_path, capsys):
        code = main(["size-bias", "--scenario", "covariate", "iv", "--output-dir", str(tmp_path)])
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "size_bias.csv")))
        assert len(rows) == 4

    def test_help_lists_commands(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        out = capsys.readouterr().out
        for name in cli._COMMANDS:
            assert name in out

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "phackpower", "test", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "--scope" in r.stdout
