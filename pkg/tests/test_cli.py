import subprocess
import sys

import pytest

from distinfer.harness.calibration import gen_calibration
from distinfer.harness.cli import build_parser, main
from distinfer.harness.modelfile import ModelBundle, write_model
from distinfer.harness.oracle import oracle_posterior

SMALL = """seed 3
duration 30
inference both
model calibration nodes=5 graph=geometric model_seed=3
links uniform q=1.0
"""


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "small.txt"
    p.write_text(SMALL)
    return p


@pytest.fixture
def model_file(tmp_path):
    cal = gen_calibration(4, seed=1)
    p = tmp_path / "model.txt"
    write_model(ModelBundle(cal.model, dict(cal.targets), dict(cal.true_bias)), p)
    return p, cal


class TestParser:
    def test_subcommands(self):
        p = build_parser()
        for cmd in (["run", "x"], ["oracle", "x"], ["opt-baseline", "--graph", "g"], ["validate", "x"],
                    ["replay", "x"]):
            assert p.parse_args(cmd).command == cmd[0]

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestCommands:
    def test_run_writes_csv(self, scenario, tmp_path, capsys):
        out = tmp_path / "out.csv"
        assert main(["run", str(scenario), "--csv", str(out)]) == 0
        text = capsys.readouterr().out
        assert "samples            30" in text
        lines = out.read_text().splitlines()
        assert lines[0].startswith("time,spanning_tree_valid") and len(lines) == 31

    def test_replay_identical(self, scenario, tmp_path, capsys):
        out = tmp_path / "a.csv"
        main(["run", str(scenario), "--csv", str(out)])
        trace = tmp_path / "trace.txt"
        assert main(["replay", str(scenario), "--against", str(out), "--trace-out", str(trace)]) == 0
        assert "identical" in capsys.readouterr().out
        assert trace.read_text().count("\n") > 100
        assert main(["replay", str(scenario)]) == 0

    def test_replay_detects_difference(self, tmp_path, capsys):
        # lossy links, so the simulation seed changes which packets arrive
        scenario = tmp_path / "lossy.txt"
        scenario.write_text(SMALL.replace("q=1.0", "q=0.8"))
        out = tmp_path / "a.csv"
        main(["run", str(scenario), "--csv", str(out)])
        assert main(["replay", str(scenario), "--seed", "4", "--against", str(out)]) == 1

    def test_oracle_on_model_file(self, model_file, capsys):
        path, cal = model_file
        assert main(["oracle", str(path), "--nodes", "1-2", "--vars", "B1"]) == 0
        text = capsys.readouterr().out
        assert "conditioning on 2 measurement(s)" in text
        mean = oracle_posterior(cal.model, ["M1", "M2"]).mean_of("B1")
        row = next(l for l in text.splitlines() if l.startswith("B1"))
        assert float(row.split()[1]) == pytest.approx(mean, rel=1e-8)

    def test_oracle_on_scenario(self, scenario, capsys):
        assert main(["oracle", str(scenario), "--measurements", "M1", "--vars", "T1,B1"]) == 0
        assert "conditioning on 1 measurement(s)" in capsys.readouterr().out

    def test_opt_baseline_graph(self, tmp_path, capsys):
        g = tmp_path / "g.txt"
        g.write_text("node 1 a\nnode 2 a\nnode 3 b\nedge 1 2 1.0\nedge 2 3 1.0\nedge 1 3 1.0\n")
        assert main(["opt-baseline", "--graph", str(g)]) == 0
        text = capsys.readouterr().out
        assert "exhaustive (3 trees evaluated)" in text and "1-2" in text

    def test_opt_baseline_scenario(self, scenario, capsys):
        assert main(["opt-baseline", "--scenario", str(scenario)]) == 0
        assert "cost" in capsys.readouterr().out

    def test_validate(self, scenario, model_file, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text(SMALL.replace("links uniform q=1.0", "links uniform q=0.2") + "kill 99 5\n")
        broken = tmp_path / "broken.txt"
        broken.write_text("seed 1\nmodel calibration nodes=3\nlink 1 2 7\n")
        assert main(["validate", str(scenario), str(model_file[0])]) == 0
        assert main(["validate", str(bad), str(broken)]) == 1
        out = capsys.readouterr().out
        assert "kill names unknown nodes [99]" in out
        assert "components" in out
        assert "line 3" in out

    def test_errors_exit_2(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "missing.txt")]) == 2
        assert "error" in capsys.readouterr().err

    def test_console_entry_point(self, scenario):
        res = subprocess.run([sys.executable, "-m", "distinfer.harness.cli", "validate", str(scenario)],
                             capture_output=True, text=True)
        assert res.returncode == 0 and "scenario ok" in res.stdout
