"""Unit tests for the RunConfig model."""

from dataclasses import fields

import pytest
from pydantic import ValidationError

from evanon.models import RunConfig
from evanon.training import TrainConfig


class TestRunConfig:
    """Test RunConfig validation."""

    def test_extra_keys_forbidden(self):
        """Test unknown keys raise ValidationError."""
        with pytest.raises(ValidationError):
            RunConfig(command="eval", learning_rate=0.1)

    def test_every_field_described(self):
        """Test every key carries a description for --help."""
        assert all(info.description for info in RunConfig.model_fields.values())

    def test_covers_training_keys(self):
        """Test every TrainConfig field is configurable."""
        assert {f.name for f in fields(TrainConfig)} <= set(RunConfig.model_fields)

    def test_bounds(self):
        """Test range constraints."""
        with pytest.raises(ValidationError):
            RunConfig(command="eval", momentum=1.0)
        with pytest.raises(ValidationError):
            RunConfig(command="eval", key_r=3.5)
        with pytest.raises(ValidationError):
            RunConfig(command="gen-dataset", cams=1)

    def test_string_coercion(self):
        """Test values read from text files are coerced."""
        config = RunConfig(command="train-joint", epochs="4", raw_baseline="false", lr="0.01")
        assert config.epochs == 4 and config.raw_baseline is False and config.lr == 0.01

    def test_paths(self):
        """Test path properties."""
        config = RunConfig(command="eval", corpus="data/toy", reports="out")
        assert config.corpus_path.name == "toy"
        assert str(config.report_path) == "out"
