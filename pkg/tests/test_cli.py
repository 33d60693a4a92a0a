import json
import subprocess
import sys

import pytest

from tactisense.cli import main
from tactisense.evaluator import read_report


def _run(capsys, *argv):
    code = main(["-q", *map(str, argv)])
    out, err = capsys.readouterr()
    return code, out, err


def _error(err):
    line = err.strip().splitlines()[-1]
    return json.loads(line)


@pytest.fixture(scope="module")
def runs(tiny_data, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_runs")
    for variant in ("s", "vs", "physics"):
        assert main(["-q", "train", "--variant", variant, "--data", str(tiny_data), "--out", str(root / variant),
                     "--epochs", "1", "--seed", "2"]) == 0
    return root


class TestErrors:
    def test_missing_data_exit_3(self, capsys, tmp_path):
        code, _, err = _run(capsys, "train", "--variant", "s", "--data", tmp_path / "nope", "--out", tmp_path / "o")
        assert code == 3
        assert _error(err) == {"error": "missing-data", "code": 3, "message": _error(err)["message"]}

    def test_no_data_flag(self, capsys, tmp_path):
        code, _, _ = _run(capsys, "train", "--variant", "s", "--out", tmp_path / "o")
        assert code == 3

    def test_existing_output_refused(self, capsys, tiny_data, tmp_path):
        (tmp_path / "o").mkdir()
        (tmp_path / "o" / "keep.txt").write_text("x")
        code, _, err = _run(capsys, "train", "--variant", "s", "--data", tiny_data, "--out", tmp_path / "o")
        assert code == 1 and _error(err)["error"] == "exists"
        assert (tmp_path / "o" / "keep.txt").read_text() == "x"

    def test_bad_seed_env(self, capsys, monkeypatch, tmp_path):
        monkeypatch.setenv("TACTISENSE_SEED", "seven")
        code, _, err = _run(capsys, "gen", "--out", tmp_path / "d")
        assert code == 2 and _error(err)["code"] == 2

    def test_argparse_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--variant", "cnn", "--out", "x"])
        assert exc.value.code == 2

    def test_usage_error_from_library(self, capsys, runs, tiny_data, tmp_path):
        code, _, err = _run(capsys, "gradcam", "--run", runs / "s", "--data", tiny_data, "--out", tmp_path / "g")
        assert code == 2 and _error(err)["error"] == "usage"


class TestCommands:
    def test_gen(self, capsys, tmp_path):
        code, out, _ = _run(capsys, "gen", "--out", tmp_path / "d", "--clip-seconds", "0.2", "--seed", "3")
        assert code == 0
        assert sum(json.loads(out)["examples"].values()) > 0
        assert (tmp_path / "d" / "dataset.json").exists()

    def test_train_outputs(self, runs):
        run = json.loads((runs / "s" / "run.json").read_text())
        assert run["resolved"]["variant"] == "S" and run["seed"] == 2
        assert (runs / "s" / "model.ckpt").exists()
        assert (runs / "physics" / "physics.json").exists()

    def test_eval_and_report(self, capsys, runs, tiny_data, tmp_path):
        code, out, _ = _run(capsys, "eval", "--run", runs / "s", "--run", runs / "physics", "--data", tiny_data,
                            "--out", tmp_path / "e1")
        assert code == 0
        assert set(json.loads(out)["mean"]) == {"S", "physics"}
        code, _, _ = _run(capsys, "eval", "--run", runs / "vs", "--data", tiny_data, "--out", tmp_path / "e2",
                          "--exclude-above-newtons", "5")
        assert code == 0
        code, _, _ = _run(capsys, "report", "--runs", tmp_path / "e1", tmp_path / "e2", "--out", tmp_path / "all.csv")
        assert code == 0
        assert list(read_report(tmp_path / "all.csv")) == ["S", "VS", "physics"]

    def test_bench(self, capsys, runs, tmp_path):
        code, out, _ = _run(capsys, "bench", "--run", runs / "vs", "--pipeline", "vs", "--iters", "5",
                            "--warmup", "1", "--out", tmp_path / "b")
        assert code == 0
        row = json.loads(out)
        assert row["pipeline"] == "vs" and row["iterations"] == 5
        assert (tmp_path / "b" / "bench.csv").exists()

    def test_gradcam(self, capsys, runs, tiny_data, tmp_path):
        code, _, _ = _run(capsys, "gradcam", "--run", runs / "vs", "--data", tiny_data, "--tick", "90",
                          "--out", tmp_path / "g")
        assert code == 0
        for axis in "xyz":
            assert (tmp_path / "g" / f"gradcam_{axis}.pgm").exists()
            assert (tmp_path / "g" / f"gradcam_{axis}.svg").exists()

    def test_module_help(self):
        res = subprocess.run([sys.executable, "-m", "tactisense.cli", "--help"], capture_output=True, text=True)
        assert res.returncode == 0
        assert "reproduce" in res.stdout
