"""Unit tests for the evanon command line."""

import os
from unittest.mock import patch

import pytest

from evanon.__main__ import build_parser, main
from evanon.commands import ALL_COMMANDS
from evanon.report import parse_key_values


def paths(tmp_path):
    return ["--corpus", str(tmp_path / "corpus"), "--checkpoints", str(tmp_path / "ckpt"), "--reports", str(tmp_path / "reports")]


class TestParser:
    """Test argument parsing."""

    def test_every_command_has_subparser(self):
        """Test each registered command parses with the shared options."""
        parser = build_parser()
        for command in ALL_COMMANDS:
            args = parser.parse_args([command, "--set", "seed=3", "--set", "bins=3"])
            assert args.command == command
            assert args.overrides == ["seed=3", "bins=3"]

    def test_flags_map_to_config_keys(self):
        """Test dedicated flags land on RunConfig keys."""
        args = build_parser().parse_args(["encrypt-baseline", "--in", "a.csv", "--out", "b.csv", "--ratio", "0.5", "--decrypt"])
        assert (args.events_in, args.events_out, args.ratio, args.decrypt) == ("a.csv", "b.csv", 0.5, True)

    def test_unset_flags_are_none(self):
        """Test flags not given do not override other sources."""
        args = build_parser().parse_args(["train-joint"])
        assert args.epochs is None and args.alpha is None

    def test_unknown_command_exits_1(self, capsys):
        """Test argparse errors exit with the usage code."""
        with pytest.raises(SystemExit) as info:
            main(["no-such-command"])
        assert info.value.code == 1
        assert "usage error" in capsys.readouterr().err

    def test_bad_flag_value_exits_1(self):
        """Test a non-numeric ratio is a usage error."""
        with pytest.raises(SystemExit) as info:
            main(["encrypt-baseline", "--ratio", "lots"])
        assert info.value.code == 1


class TestMain:
    """Test main() exit codes and output."""

    @patch.dict(os.environ, {"EVANON_SEED": "5"})
    def test_gen_dataset(self, tmp_path, capsys):
        """Test a successful run prints the summary and exits 0."""
        code = main(["gen-dataset", *paths(tmp_path), "--set", "num_ids=6", "--set", "num_test_ids=2", "--set", "frames=3"])
        out = capsys.readouterr().out
        assert code == 0
        assert "dataset.identities_train" in out
        assert "report:" in out
        assert parse_key_values(tmp_path / "reports" / "gen-dataset.resolved-config")["seed"] == 5

    def test_unknown_key_exits_1(self, tmp_path, capsys):
        """Test an unknown --set key prints one diagnostic line."""
        code = main(["gen-dataset", *paths(tmp_path), "--set", "speed=3"])
        err = capsys.readouterr().err.strip().splitlines()
        assert code == 1
        assert err[-1].startswith("evanon gen-dataset:") and "speed" in err[-1]

    def test_missing_corpus_exits_2(self, tmp_path, capsys):
        """Test a missing corpus exits with the data code."""
        assert main(["eval", *paths(tmp_path)]) == 2
        assert "DataError" in capsys.readouterr().err

    def test_config_file(self, tmp_path):
        """Test --config files are read and flags still win."""
        cfg = tmp_path / "run.cfg"
        cfg.write_text("num_ids = 6\nnum_test_ids = 2\nframes = 3\nseed = 1\n")
        assert main(["gen-dataset", "--config", str(cfg), *paths(tmp_path), "--seed", "8"]) == 0
        resolved = parse_key_values(tmp_path / "reports" / "gen-dataset.resolved-config")
        assert resolved["seed"] == 8 and resolved["num_ids"] == 6
