"""Unit tests for the four networks, EANN1 checkpoints and the gradient-check suite."""

import struct

import numpy as np
import pytest

from evanon.checkpoint import MAGIC, load_checkpoint, save_checkpoint, validate_manifest
from evanon.errors import CheckpointError, NumericalError, ShapeMismatchError
from evanon.events import GrayImage, VoxelGrid
from evanon.networks import (
    AnonymizerNet,
    AttackerNet,
    InverterNet,
    ReIdNet,
    anonymize,
    classify,
    embed,
    gradcheck_suite,
    integrate_batch,
    integrate_reconstruct,
    l2_normalize,
    load_model,
    predict,
    reconstruct,
    save_model,
)


@pytest.fixture
def grid():
    rng = np.random.default_rng(0)
    return VoxelGrid(np.tanh(rng.normal(size=(5, 8, 12))), 0.0, 40_000.0)


class TestNetworks:
    """Test network shapes and single-sample operations."""

    def test_anonymizer_preserves_shape(self, grid):
        """Test anonymize returns a grid of the same shape and window."""
        out = anonymize(AnonymizerNet(5, seed=1), grid)
        assert out.data.shape == grid.data.shape
        assert (out.t0, out.T) == (grid.t0, grid.T)

    def test_anonymizer_wrong_bins(self, grid):
        """Test a grid with the wrong bin count is rejected."""
        with pytest.raises(ShapeMismatchError):
            AnonymizerNet(3).forward(grid.data[None])

    def test_attacker_output_range(self, grid):
        """Test reconstructions are gray images in [0, 1]."""
        image = reconstruct(AttackerNet(5, seed=2), grid)
        assert isinstance(image, GrayImage)
        assert image.pixels.shape == (8, 12)
        assert 0.0 <= image.pixels.min() and image.pixels.max() <= 1.0

    def test_attacker_needs_even_size(self):
        """Test odd spatial sizes are rejected by the attacker."""
        with pytest.raises(ShapeMismatchError, match="even"):
            AttackerNet(5).forward(np.zeros((1, 5, 7, 8)))

    def test_reid_embedding_and_logits(self, grid):
        """Test embeddings are unit-norm and logits have one entry per class."""
        reid = ReIdNet(5, embedding_dim=16, num_classes=4, seed=3)
        e = embed(reid, grid)
        assert e.shape == (16,)
        assert np.linalg.norm(e) == pytest.approx(1.0)
        assert classify(reid, grid).shape == (4,)

    def test_reid_on_gray_images(self):
        """Test a one-channel embedder accepts gray images."""
        reid = ReIdNet(1, embedding_dim=8, seed=4)
        assert embed(reid, GrayImage(np.full((8, 8), 0.5)), normalize=False).shape == (8,)

    def test_identical_inputs_identical_embeddings(self, grid):
        """Test embedding is deterministic."""
        reid = ReIdNet(5, embedding_dim=8, seed=5)
        assert np.array_equal(embed(reid, grid), embed(reid, grid))

    def test_reid_rejects_bad_config(self):
        """Test invalid ReId dimensions raise ValueError."""
        with pytest.raises(ValueError, match="class count"):
            ReIdNet(5, num_classes=1)

    def test_same_seed_same_weights(self):
        """Test construction is seeded."""
        a, b = AnonymizerNet(5, seed=9), AnonymizerNet(5, seed=9)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_l2_normalize_zero_vector(self):
        """Test zero embeddings cannot be normalized."""
        with pytest.raises(NumericalError):
            l2_normalize(np.zeros((1, 3)))

    def test_integrate_reconstruct(self):
        """Test the integration attacker min-max normalizes |bin sum|."""
        data = np.zeros((2, 2, 2))
        data[0, 0, 0] = 1.0
        data[1, 1, 1] = -3.0
        image = integrate_reconstruct(VoxelGrid(data))
        assert image.pixels.tolist() == [[1.0 / 3.0, 0.0], [0.0, 1.0]]
        assert not integrate_batch(np.zeros((1, 2, 3, 3))).any()

    def test_predict_chunks(self):
        """Test predict stacks chunked results in order."""
        x = np.arange(10.0).reshape(10, 1)
        assert np.array_equal(predict(lambda b: 2 * b, x, batch_size=3), 2 * x)
        with pytest.raises(ValueError):
            predict(lambda b: b, np.zeros((0, 1)))


class TestFreeze:
    """Test freezing semantics."""

    def test_frozen_attacker_passes_gradient(self, grid):
        """Test a frozen attacker returns input gradients but accumulates nothing."""
        attacker = AttackerNet(5, seed=6).freeze()
        x = grid.data[None]
        out = attacker.forward(x)
        grad_in = attacker.backward(np.ones_like(out))

        assert attacker.frozen
        assert grad_in.shape == x.shape and np.abs(grad_in).sum() > 0
        assert all(not p.grad.any() for p in attacker.parameters())

    def test_unfreeze(self):
        """Test unfreeze restores trainable flags."""
        model = AnonymizerNet(5).freeze().unfreeze()
        assert not model.frozen
        assert all(p.trainable for p in model.parameters())


class TestCheckpoints:
    """Test EANN1 checkpoints."""

    def test_round_trip_bit_exact(self, tmp_path):
        """Test save then load reproduces every weight bit-for-bit."""
        model = ReIdNet(5, embedding_dim=8, num_classes=3, seed=7)
        path = tmp_path / "reid.eann"
        save_model(model, path)
        loaded = load_model(path)

        assert isinstance(loaded, ReIdNet)
        assert loaded.config == model.config
        for name, p in model.named_parameters().items():
            assert np.array_equal(loaded.named_parameters()[name].value, p.value)

    def test_file_layout(self, tmp_path):
        """Test the checkpoint starts with the magic and a manifest length."""
        path = tmp_path / "m.eann"
        save_model(AnonymizerNet(2), path)
        data = path.read_bytes()
        assert data[:5] == MAGIC
        (length,) = struct.unpack("<I", data[5:9])
        assert data[9 : 9 + length].startswith(b"{")

    def test_frozen_flags_preserved(self, tmp_path):
        """Test loading restores the frozen flag."""
        path = tmp_path / "attacker.eann"
        save_model(AttackerNet(5, seed=1).freeze(), path)
        assert load_model(path).frozen

    def test_shape_mismatch_names_parameter(self, tmp_path):
        """Test loading into a different architecture names the parameter."""
        path = tmp_path / "anon.eann"
        save_model(AnonymizerNet(5), path)
        with pytest.raises(CheckpointError, match="anonymizer.conv1.weight") as info:
            load_model(path, into=AnonymizerNet(3))
        assert info.value.parameter == "anonymizer.conv1.weight"

    def test_wrong_kind_rejected(self, tmp_path):
        """Test loading an attacker checkpoint into an anonymizer fails."""
        path = tmp_path / "att.eann"
        save_model(AttackerNet(5), path)
        with pytest.raises(CheckpointError, match="expected 'anonymizer'"):
            load_model(path, into=AnonymizerNet(5))

    def test_inverter_kind(self, tmp_path):
        """Test inverter checkpoints rebuild an InverterNet."""
        path = tmp_path / "inv.eann"
        save_model(InverterNet(5, seed=2), path)
        assert type(load_model(path)) is InverterNet

    def test_truncated_file(self, tmp_path):
        """Test a truncated checkpoint is rejected."""
        path = tmp_path / "m.eann"
        save_model(AnonymizerNet(2), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        """Test trailing data after the last array is rejected."""
        path = tmp_path / "m.eann"
        save_model(AnonymizerNet(2), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        """Test a file without the magic is rejected."""
        path = tmp_path / "m.eann"
        path.write_bytes(b"NOPE!" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="not an EANN1"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        """Test a missing checkpoint raises CheckpointError."""
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.eann")

    def test_manifest_schema(self, tmp_path):
        """Test manifests violating the schema are rejected on save."""
        with pytest.raises(CheckpointError, match="networks"):
            validate_manifest({"model": "x", "config": {}, "networks": []})
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.eann", {"model": 1}, {})


class TestGradCheckSuite:
    """Test the finite-difference audit of all networks."""

    def test_suite_passes(self):
        """Test every composite passes its tolerance on the default seed."""
        cases = gradcheck_suite(seed=0, max_entries=8)
        assert [c.name for c in cases] == [
            "conv_pair",
            "anonymizer_struct",
            "attacker_rec",
            "reid_identity",
            "inverter_chain",
            "ssim_input",
        ]
        for case in cases:
            assert case.passed, f"{case.name}: {case.report.worst:.3e}"
            assert case.report.entries_checked > 0

    def test_plain_composites_below_1e4(self):
        """Test SSIM-free composites meet the 1e-4 tolerance."""
        cases = {c.name: c for c in gradcheck_suite(seed=1, max_entries=8)}
        assert cases["conv_pair"].report.worst < 1e-4
        assert cases["reid_identity"].report.worst < 1e-4
