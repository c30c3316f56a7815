import csv
import json
import subprocess
import sys
import time

import pytest

from rssprivacy.cli import CRLB_COLUMNS, SIMULATE_COLUMNS, main, read_report_csv


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestOptimizeDist:
    def test_uniform_case(self, capsys):
        assert main(["optimize-dist", "--levels-mw", "1,2,3,4", "--mu-mw", "2.5"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "index,level_mw,level_dbm,probability"
        probs = [float(line.split(",")[3]) for line in out[1:5]]
        assert probs == pytest.approx([0.25] * 4, abs=1e-10)

    def test_dbm_defaults(self, capsys):
        assert main(["optimize-dist", "--levels-dbm=-10,-6,-3,0", "--mu-dbm", "-3"]) == 0
        out = capsys.readouterr().out
        assert "# mean_dbm = " in out
        mean = float(next(l for l in out.splitlines() if l.startswith("# mean_mw")).split("=")[1])
        assert mean == pytest.approx(10 ** (-0.3), abs=1e-10)

    def test_infeasible_exit_code(self, capsys):
        assert main(["optimize-dist", "--levels-mw", "1,2,3,4", "--mu-mw", "5"]) == 2
        assert "mean outside level range" in capsys.readouterr().err

    def test_output_file(self, tmp_path):
        out = tmp_path / "me.csv"
        assert main(["optimize-dist", "--levels-mw", "1,2,3,4", "--mu-mw", "2", "--output", str(out)]) == 0
        assert read_csv(out)[0] == ["index", "level_mw", "level_dbm", "probability"]

    def test_needs_one_level_spec(self):
        assert main(["optimize-dist", "--mu-mw", "2"]) == 1
        assert main(["optimize-dist", "--levels-mw", "2,1", "--mu-mw", "1.5"]) == 1


SIM_ARGS = ["simulate", "--trials", "10", "--m-values", "4,8", "--snr-db", "16", "--seed", "7"]


class TestSimulate:
    def test_smoke(self, tmp_path):
        out = tmp_path / "sim.csv"
        t0 = time.perf_counter()
        assert main(SIM_ARGS + ["--output", str(out)]) == 0
        assert time.perf_counter() - t0 < 10
        rows = read_csv(out)
        assert tuple(rows[0]) == SIMULATE_COLUMNS
        assert len(rows) == 1 + 3 * 2 * 2
        assert (tmp_path / "sim.manifest.json").exists()
        assert len(read_report_csv(out)) == 12

    def test_manifest_rerun_is_byte_identical(self, tmp_path):
        first = tmp_path / "a.csv"
        assert main(SIM_ARGS + ["--output", str(first)]) == 0
        second = tmp_path / "b.csv"
        assert main(["simulate", "--manifest", str(tmp_path / "a.manifest.json"), "--output", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()
        manifest = json.loads((tmp_path / "a.manifest.json").read_text())
        assert manifest["subcommand"] == "simulate" and manifest["seed"] == 7

    def test_out_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RSSPRIVACY_OUTPUT_DIR", str(tmp_path))
        assert main(SIM_ARGS) == 0
        assert (tmp_path / "simulate.csv").exists()

    def test_missing_seed(self, tmp_path, capsys):
        assert main(["simulate", "--trials", "10", "--out-dir", str(tmp_path)]) == 1
        assert "seed" in capsys.readouterr().err

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[experiment]\nseed = 7\ntrials = 10\nm_values = 4:8:4\nsnr_db = 16\n")
        out = tmp_path / "cfg.csv"
        assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
        ref = tmp_path / "ref.csv"
        assert main(SIM_ARGS + ["--output", str(ref)]) == 0
        assert out.read_bytes() == ref.read_bytes()

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[experiment]\nseed = 1\nfrobnicate = 3\n")
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1
        assert "frobnicate" in capsys.readouterr().err

    def test_empty_blocks(self, tmp_path):
        assert main(["simulate", "--trials", "10", "--m-values", "3", "--seed", "1", "--out-dir", str(tmp_path)]) == 1

    def test_bracket_failure_exit_code(self, tmp_path):
        cfg = tmp_path / "b.ini"
        cfg.write_text("[estimator]\nh_min = 0.5\nh_max = 1.0\n")
        args = SIM_ARGS + ["--config", str(cfg), "--out-dir", str(tmp_path)]
        assert main(args) == 3


class TestCrlb:
    def test_crlb_csv(self, tmp_path):
        out = tmp_path / "crlb.csv"
        args = ["crlb", "--seed", "1", "--m-values", "4,8", "--crlb-trials", "3", "--mc-samples", "1000"]
        assert main(args + ["--output", str(out)]) == 0
        rows = read_csv(out)
        assert tuple(rows[0]) == CRLB_COLUMNS
        assert len(rows) == 1 + 2 * 2 * 2
        again = tmp_path / "again.csv"
        assert main(["crlb", "--manifest", str(tmp_path / "crlb.manifest.json"), "--output", str(again)]) == 0
        assert out.read_bytes() == again.read_bytes()


class TestRatioTable:
    def test_table(self, tmp_path, capsys):
        sim = tmp_path / "sim.csv"
        assert main(SIM_ARGS + ["--output", str(sim)]) == 0
        capsys.readouterr()
        out = tmp_path / "ratio.csv"
        assert main(["ratio-table", str(sim), "--output", str(out)]) == 0
        text = capsys.readouterr().out
        assert "SNR= 16 dB" in text and "Avg." in text
        rows = read_csv(out)
        assert rows[0] == ["snr_db", "min", "avg", "max"]
        lo, avg, hi = map(float, rows[1][1:])
        assert lo <= avg <= hi

    def test_missing_node_type(self, tmp_path, capsys):
        sim = tmp_path / "sim.csv"
        assert main(SIM_ARGS + ["--output", str(sim)]) == 0
        lines = [l for l in sim.read_text().splitlines() if ",untrusted," not in l]
        sim.write_text("\n".join(lines) + "\n")
        assert main(["ratio-table", str(sim), "--out-dir", str(tmp_path)]) == 1
        assert "missing node type" in capsys.readouterr().err


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "rssprivacy.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "rssprivacy" in res.stdout
