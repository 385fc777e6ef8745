"""Tests for the command line entry points and their exit codes"""

import numpy as np
import pandas as pd
import pytest

from cli.commands import main, summarize_stats
from config.settings import EXIT_IO, EXIT_OK, EXIT_USAGE, MANIFEST_FILE, STATS_FILE
from utils.helpers import read_pgm, write_pgm

TINY_CONFIG = """\
seed = 2
train.total_steps = 8
train.batch_size = 4
train.seed_steps = 2
train.eval_interval = 4
train.eval_episodes = 1
train.record_interval = 4
env.size = 12
env.horizon = 4
env.frame_stack = 1
network.feature_dim = 4
network.channels = 2
network.hidden_dim = 8
augment.max_pad = 1
"""


@pytest.fixture
def gradient_pgm(tmp_path):
    image = (np.arange(64).reshape(8, 8) * 4).astype(np.uint8)
    path = tmp_path / "in.pgm"
    write_pgm(path, image)
    return path, image


class TestUsage:

    def test_help_lists_config_keys(self, capsys):
        assert main(["train", "--help"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "loss.critic_mode" in out
        assert "augment.mu" in out

    def test_unknown_command(self):
        assert main(["deploy"]) == EXIT_USAGE

    def test_unknown_suite(self):
        assert main(["verify", "--suite", "prop9"]) == EXIT_USAGE


class TestVerify:

    def test_single_suite_passes(self, capsys, tmp_path):
        report = tmp_path / "report.csv"
        assert main(["verify", "--suite", "pinsker", "--seed", "0", "--report", str(report)]) == EXIT_OK
        assert "checks, 0 failed" in capsys.readouterr().out
        assert pd.read_csv(report)["pass"].all()


class TestPreview:

    def test_identity_is_byte_exact(self, tmp_path, gradient_pgm):
        src, _ = gradient_pgm
        out = tmp_path / "out.pgm"
        code = main(["preview", "--transform", "shift:max_pad=4", "--param", "shift:dx=0,dy=0",
                     "--in", str(src), "--out", str(out)])
        assert code == EXIT_OK
        assert out.read_bytes() == src.read_bytes()

    def test_commented_header_is_rewritten(self, tmp_path):
        src, out = tmp_path / "commented.pgm", tmp_path / "out.pgm"
        src.write_bytes(b"P5\n# scanner\n2  2\n255\n\x05\x09\x11\x20")
        code = main(["preview", "--transform", "shift:max_pad=4", "--param", "shift:dx=0,dy=0",
                     "--in", str(src), "--out", str(out)])
        assert code == EXIT_OK
        assert out.read_bytes() == b"P5\n2 2\n255\n\x05\x09\x11\x20"

    def test_help_explains_header_rewrite(self, capsys):
        assert main(["preview", "--help"]) == EXIT_OK
        assert "canonical" in capsys.readouterr().out

    def test_shift_moves_impulse(self, tmp_path):
        image = np.zeros((9, 9), dtype=np.uint8)
        image[4, 4] = 255
        src, out = tmp_path / "impulse.pgm", tmp_path / "shifted.pgm"
        write_pgm(src, image)
        code = main(["preview", "--transform", "shift:max_pad=4", "--param", "shift:dx=2,dy=1",
                     "--in", str(src), "--out", str(out)])
        assert code == EXIT_OK
        shifted = read_pgm(out)
        assert shifted[5, 6] == 255
        assert int(shifted.sum()) == 255

    def test_rotation_twice_restores(self, tmp_path, gradient_pgm):
        src, image = gradient_pgm
        once, twice = tmp_path / "once.pgm", tmp_path / "twice.pgm"
        args = ["preview", "--transform", "rotation", "--param", "rotation:angle=180"]
        assert main(args + ["--in", str(src), "--out", str(once)]) == EXIT_OK
        assert main(args + ["--in", str(once), "--out", str(twice)]) == EXIT_OK
        np.testing.assert_array_equal(read_pgm(twice), image)
        np.testing.assert_array_equal(read_pgm(once), image[::-1, ::-1])

    def test_parameter_out_of_bounds(self, tmp_path, gradient_pgm):
        src, _ = gradient_pgm
        code = main(["preview", "--transform", "shift:max_pad=1", "--param", "shift:dx=3,dy=0",
                     "--in", str(src), "--out", str(tmp_path / "x.pgm")])
        assert code == EXIT_USAGE

    def test_malformed_pgm(self, tmp_path):
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"P6\n2 2\n255\n")
        code = main(["preview", "--transform", "shift", "--param", "shift:dx=0,dy=0",
                     "--in", str(bad), "--out", str(tmp_path / "x.pgm")])
        assert code == EXIT_IO

    def test_missing_input(self, tmp_path):
        code = main(["preview", "--transform", "shift", "--param", "shift:dx=0,dy=0",
                     "--in", str(tmp_path / "nope.pgm"), "--out", str(tmp_path / "x.pgm")])
        assert code == EXIT_IO


class TestTrainAndStats:

    def test_bad_config_value(self, tmp_path, capsys):
        config = tmp_path / "bad.toml"
        config.write_text('loss.critic_mode = "telepathic"\ntrain.total_steps = 0\n')
        assert main(["train", "--config", str(config), "--out", str(tmp_path / "run")]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "loss.critic_mode" in err and "train.total_steps" in err

    def test_unknown_key(self, tmp_path):
        config = tmp_path / "typo.toml"
        config.write_text("train.totl_steps = 5\n")
        assert main(["train", "--config", str(config)]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "missing.toml")]) == EXIT_IO

    def test_train_then_stats(self, tmp_path, capsys):
        config = tmp_path / "tiny.toml"
        config.write_text(TINY_CONFIG)
        run = tmp_path / "run"
        assert main(["train", "--config", str(config), "--out", str(run)]) == EXIT_OK
        assert (run / MANIFEST_FILE).exists()
        assert (run / "config.toml").read_bytes() == TINY_CONFIG.encode()
        assert "final eval return" in capsys.readouterr().out

        summary = tmp_path / "summary.csv"
        assert main(["stats", "--run", str(run), "--out", str(summary)]) == EXIT_OK
        table = pd.read_csv(summary)
        assert "std_critic_loss" in table["statistic"].tolist()

        # the same directory is never overwritten
        assert main(["train", "--config", str(config), "--out", str(run)]) == EXIT_USAGE

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        config = tmp_path / "tiny.toml"
        config.write_text(TINY_CONFIG)
        monkeypatch.setenv("AUGRL_SEED", "11")
        assert main(["train", "--config", str(config), "--out", str(tmp_path / "env_seed")]) == EXIT_OK
        assert '"seed": 11' in (tmp_path / "env_seed" / MANIFEST_FILE).read_text()

    def test_stats_missing_run(self, tmp_path):
        assert main(["stats", "--run", str(tmp_path / "none")]) == EXIT_IO


def test_summarize_stats_last():
    stats = pd.DataFrame({"step": [1, 2, 3], "kl_aug": [1.0, 2.0, 4.0]})
    summary = summarize_stats(stats, last=2).set_index("statistic")
    assert summary.loc["kl_aug", "mean"] == pytest.approx(3.0)
    assert summary.loc["kl_aug", "std"] == pytest.approx(1.0)
    assert summary.loc["kl_aug", "final"] == 4.0
    assert "step" not in summary.index
