"""CLI surface: subcommands, config-file precedence, exit codes."""
import json

import pytest

from capfew.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated store plus split files, via the CLI itself."""
    d = tmp_path_factory.mktemp("cli")
    rc = main([
        "gen-synthetic", "--out", str(d / "s.capf"),
        "--classes", "6", "--videos-per-class", "4",
        "--frames", "4", "--spatial", "2", "--channels", "8",
        "--visual-snr", "1.0", "--text-snr", "8.0", "--seed", "1",
        "--train-split", str(d / "train.txt"),
        "--test-split", str(d / "test.txt"),
    ])
    assert rc == 0
    return d


def base_flags(workspace, tmp_path):
    return [
        "--store", str(workspace / "s.capf"),
        "--train-split", str(workspace / "train.txt"),
        "--test-split", str(workspace / "test.txt"),
        "--frames", "4", "--spatial", "2", "--channels", "8",
        "--heads", "2", "--way", "3",
        "--checkpoint", str(tmp_path / "m.capc"),
    ]


class TestGenerateAndInspect:
    def test_inspect_shows_shape_and_histogram(self, workspace, capsys):
        assert main(["inspect-store", str(workspace / "s.capf")]) == 0
        out = capsys.readouterr().out
        assert "T=4 S=2 C=8" in out
        assert "class 5: 4 videos" in out
        assert "(synthetic)" in out

    def test_split_files(self, workspace):
        assert (workspace / "train.txt").read_text() == "0\n1\n2\n"
        assert (workspace / "test.txt").read_text() == "3\n4\n5\n"

    def test_missing_store_exits_nonzero(self, tmp_path, capsys):
        rc = main(["inspect-store", str(tmp_path / "nope.capf")])
        assert rc != 0 or "error" in capsys.readouterr().err


class TestTrainEval:
    def test_train_then_eval(self, workspace, tmp_path, capsys):
        flags = base_flags(workspace, tmp_path)
        rc = main(["train", *flags, "--train-episodes", "5"])
        assert rc == 0
        assert (tmp_path / "m.capc").exists()
        rc = main(["eval", *flags, "--eval-episodes", "20",
                   "--out-dir", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "accuracy:" in out
        assert (tmp_path / "out" / "report.json").exists()
        assert (tmp_path / "out" / "confusion.png").exists()

    def test_config_file_with_flag_precedence(self, workspace, tmp_path):
        cfg = {
            "store": str(workspace / "s.capf"),
            "train_split": str(workspace / "train.txt"),
            "test_split": str(workspace / "test.txt"),
            "way": 3,
            "train_episodes": 3,
            "checkpoint": str(tmp_path / "file.capc"),
            "model": {"T": 4, "S": 2, "C": 8, "heads": 2},
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        # flag overrides the file's checkpoint
        rc = main(["train", "--config", str(cfg_path),
                   "--checkpoint", str(tmp_path / "flag.capc")])
        assert rc == 0
        assert (tmp_path / "flag.capc").exists()
        assert not (tmp_path / "file.capc").exists()

    def test_missing_store_is_config_error(self, capsys):
        rc = main(["train"])
        assert rc == 2
        assert "ConfigError" in capsys.readouterr().err

    def test_eval_without_checkpoint_fails_cleanly(self, workspace, tmp_path, capsys):
        flags = base_flags(workspace, tmp_path)
        rc = main(["eval", *flags, "--eval-episodes", "5"])
        assert rc != 0


class TestSweep:
    def test_layer_sweep_writes_table_and_figure(self, workspace, tmp_path, capsys):
        flags = base_flags(workspace, tmp_path)
        rc = main([
            "sweep", *flags, "--axis", "L", "--values", "1,2",
            "--train-episodes", "2", "--eval-episodes", "5",
            "--out-dir", str(tmp_path / "sw"),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "accuracy" in out
        for name in ("sweep.csv", "sweep.json", "sweep.png", "sweep.txt"):
            assert (tmp_path / "sw" / name).exists()


class TestGradcheck:
    def test_passes_at_default_threshold(self, capsys):
        rc = main(["gradcheck", "--draws", "4", "--coords", "2"])
        assert rc == 0
        assert "pass" in capsys.readouterr().out
