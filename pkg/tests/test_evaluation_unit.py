"""Unit tests for ranking metrics, image quality and the attack evaluations."""

from dataclasses import replace

import numpy as np
import pytest

from evanon.baselines import EncryptionKey, encrypt_stream
from evanon.errors import DataError
from evanon.evaluation import (
    ABLATION_HEADER,
    CMC_RANKS,
    EvalReport,
    camera_masks,
    cross_camera_split,
    evaluate_encryption_baseline,
    evaluate_image_quality,
    evaluate_reid,
    image_quality,
    inversion_attack,
    rank_metrics,
    retrieval_attack,
    retrieval_reports,
    run_loss_ablation,
)
from evanon.networks import AnonymizerNet, AttackerNet, ReIdNet, integrate_batch
from evanon.quality import SsimConfig
from evanon.samples import build_windows, prepare_windows
from evanon.simulator import generate_toy_corpus
from evanon.training import TrainConfig

SSIM = SsimConfig(window_size=7)


def oracle(q_emb, q_ids, q_cams, q_seqs, g_emb, g_ids, g_cams, g_seqs):
    """Brute-force CMC and mAP with plain Python sorting."""
    n_gallery = len(g_ids)
    cmc = [0.0] * n_gallery
    aps = []
    for i in range(len(q_ids)):
        scored = []
        for j in range(n_gallery):
            if g_cams[j] == q_cams[i] and g_seqs[j] == q_seqs[i]:
                continue
            d = float(np.sqrt(sum((q_emb[i][c] - g_emb[j][c]) ** 2 for c in range(len(q_emb[i])))))
            scored.append((d, j))
        scored.sort()
        relevant = [g_ids[j] == q_ids[i] for _, j in scored]
        if not any(relevant):
            continue
        first = relevant.index(True)
        for r in range(first, n_gallery):
            cmc[r] += 1.0
        found, precisions = 0, []
        for rank, hit in enumerate(relevant, start=1):
            if hit:
                found += 1
                precisions.append(found / rank)
        aps.append(sum(precisions) / len(precisions))
    return [c / len(aps) for c in cmc], sum(aps) / len(aps)


@pytest.fixture(scope="module")
def windows():
    corpus = generate_toy_corpus(6, 2, frames_per_seq=3, height=32, width=32, num_test_ids=3, seed=21)
    return prepare_windows(corpus, bins=3)


@pytest.fixture
def config():
    return TrainConfig(
        epochs=1,
        retrieval_epochs=1,
        inversion_epochs=1,
        ids_per_batch=2,
        samples_per_id=2,
        embedding_dim=8,
        bins=3,
        seed=2,
    )


class TestRankMetrics:
    """Test CMC and mAP."""

    def test_matches_brute_force_oracle(self):
        """Test exact agreement with the oracle on random instances."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            nq, ng, dim = int(rng.integers(1, 12)), int(rng.integers(2, 51)), int(rng.integers(1, 6))
            q_emb, g_emb = rng.normal(size=(nq, dim)), rng.normal(size=(ng, dim))
            q_ids, g_ids = rng.integers(0, 5, size=nq), rng.integers(0, 5, size=ng)
            q_cams, g_cams = rng.integers(0, 2, size=nq), rng.integers(0, 2, size=ng)
            q_seqs, g_seqs = rng.integers(0, 2, size=nq), rng.integers(0, 2, size=ng)
            try:
                curve, mean_ap, _ = rank_metrics(q_emb, q_ids, q_cams, g_emb, g_ids, g_cams, q_seqs, g_seqs)
            except DataError:
                with pytest.raises(ZeroDivisionError):
                    oracle(q_emb, q_ids, q_cams, q_seqs, g_emb, g_ids, g_cams, g_seqs)
                continue
            expected_curve, expected_map = oracle(q_emb, q_ids, q_cams, q_seqs, g_emb, g_ids, g_cams, g_seqs)
            assert curve.tolist() == pytest.approx(expected_curve, abs=1e-12)
            assert mean_ap == pytest.approx(expected_map, abs=1e-12)

    def test_perfect_embeddings(self):
        """Test identity-coded embeddings give rank-1 = mAP = 1."""
        ids = np.array([0, 1, 2])
        emb = np.eye(3)
        curve, mean_ap, valid = rank_metrics(emb, ids, np.zeros(3), emb, ids, np.ones(3))
        assert curve[0] == 1.0 and mean_ap == 1.0 and valid == 3

    def test_same_camera_same_sequence_excluded(self):
        """Test a gallery copy from the query's own camera and sequence is junk."""
        emb = np.array([[0.0], [0.1], [5.0]])
        curve, _, _ = rank_metrics(
            emb[:1],
            np.array([0]),
            np.array(["c0"]),
            emb,
            np.array([0, 1, 0]),
            np.array(["c0", "c1", "c1"]),
            np.array(["s"]),
            np.array(["s", "s", "s"]),
        )
        # the exact copy is excluded, the impostor ranks first, the true match second
        assert curve.tolist()[:2] == [0.0, 1.0]

    def test_no_valid_query(self):
        """Test all-irrelevant galleries raise DataError."""
        with pytest.raises(DataError):
            rank_metrics(np.zeros((1, 2)), np.array([0]), np.array([0]), np.ones((2, 2)), np.array([1, 2]), np.array([1, 1]))

    def test_report_values(self):
        """Test flat report keys."""
        report = EvalReport("reid_raw", "raw", "raw", cmc={1: 0.5, 5: 1.0}, mean_ap=0.6, chance=0.25, num_queries=4, num_gallery=8)
        values = report.as_values()
        assert values["reid_raw.rank1"] == 0.5
        assert values["reid_raw.map"] == 0.6
        assert values["reid_raw.gallery_size"] == 8
        assert report.rank(5) == 1.0


class TestSplitsAndQuality:
    """Test camera splits and image-quality evaluation."""

    def test_camera_masks(self, windows):
        """Test the first camera forms the query set."""
        query, gallery = camera_masks(windows.test)
        assert set(windows.test.cameras[query]) == {"c0"}
        assert (query ^ gallery).all()
        q, g = cross_camera_split(windows.test)
        assert len(q) + len(g) == len(windows.test)

    def test_single_camera_rejected(self, windows):
        """Test cross-camera evaluation needs two cameras."""
        with pytest.raises(DataError):
            camera_masks(windows.test.subset(np.flatnonzero(windows.test.cameras == "c0")))

    def test_perfect_reconstruction(self):
        """Test identical images give SSIM 1 and the PSNR cap."""
        frames = np.random.default_rng(1).uniform(size=(3, 1, 12, 12))
        report = image_quality(frames, frames, "q", SSIM)
        assert report.ssim == pytest.approx(1.0)
        assert report.psnr == 100.0

    def test_shape_mismatch(self):
        """Test mismatched reconstructions raise DataError."""
        with pytest.raises(DataError):
            image_quality(np.zeros((1, 1, 8, 8)), np.zeros((2, 1, 8, 8)), "q")

    def test_integration_attacker_quality(self, windows):
        """Test raw and anonymized paths of the integration attacker report in range."""
        raw = evaluate_image_quality(integrate_batch, windows.test, cfg=SSIM)
        anon = evaluate_image_quality(integrate_batch, windows.test, AnonymizerNet(3, seed=1), cfg=SSIM)
        assert raw.protocol == "quality_raw" and anon.protocol == "quality_anonymized"
        assert -1.0 <= anon.ssim <= 1.0 and raw.psnr > 0


class TestReidEvaluation:
    """Test ReId and retrieval evaluations."""

    def test_evaluate_reid(self, windows):
        """Test raw and anonymized cross-camera ReId reports."""
        reid = ReIdNet(3, 8, 3, seed=4)
        query, gallery = cross_camera_split(windows.test)
        report = evaluate_reid(reid, query, gallery)
        anon = evaluate_reid(reid, query, gallery, AnonymizerNet(3), protocol="reid_anonymized")

        assert set(report.cmc) == set(CMC_RANKS)
        assert report.chance == pytest.approx(1.0 / 3.0)
        assert anon.query_source == "anonymized"
        assert 0.0 <= anon.rank(1) <= anon.rank(5) <= 1.0

    def test_retrieval_reports_pairings(self, windows):
        """Test one report per requested pairing, labelled with its sources."""
        test = windows.test
        embedder = ReIdNet(1, 8, 3, seed=5)
        reports = retrieval_reports(embedder, test, {"rgb": test.frames}, {"rgb_rgb": ("rgb", "rgb")})
        assert list(reports) == ["rgb_rgb"]
        assert reports["rgb_rgb"].query_source == "rgb"
        assert reports["rgb_rgb"].num_gallery == int((test.cameras != "c0").sum())

    def test_retrieval_attack(self, windows, config):
        """Test the three pairings and the optional inverted pairing."""
        attacker = AttackerNet(3, seed=6).freeze()
        anonymizer = AnonymizerNet(3, seed=7)
        result = retrieval_attack(windows, attacker, anonymizer, config, inverter=AnonymizerNet(3, seed=8))
        assert sorted(result.reports) == [
            "retrieval_event_anon",
            "retrieval_rgb_anon",
            "retrieval_rgb_event",
            "retrieval_rgb_inverted",
        ]
        assert result.embedder.in_channels == 1

    def test_noise_gallery_near_chance(self, windows, config):
        """Test a gallery of pure noise gives about chance rank-1 over several seeds."""
        rank1, chance = [], []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            result = retrieval_attack(
                windows,
                AttackerNet(3, seed=seed).freeze(),
                lambda x: rng.normal(size=x.shape),
                replace(config, seed=seed),
            )
            report = result.reports["retrieval_rgb_anon"]
            rank1.append(report.rank(1))
            chance.append(report.chance)

        assert chance == pytest.approx([1.0 / 3.0] * 5)
        assert abs(float(np.mean(rank1)) - 1.0 / 3.0) <= 0.25

    def test_inversion_attack(self, windows, config):
        """Test the inversion attack adds inverted retrieval and quality reports."""
        anonymizer = AnonymizerNet(3, seed=7)
        before = [p.value.copy() for p in anonymizer.parameters()]
        result = inversion_attack(anonymizer, AttackerNet(3, seed=6), windows, config, SSIM)

        assert "retrieval_rgb_inverted" in result.reports
        assert result.reports["quality_inverted"].protocol == "quality_inverted"
        assert result.inverter.kind == "inverter"
        assert all(np.array_equal(a, p.value) for a, p in zip(before, anonymizer.parameters()))


class TestBaselinesAndAblation:
    """Test the encryption-baseline evaluation and the loss ablation."""

    def test_encryption_baseline_reports(self, windows):
        """Test per-method quality, ReId and retrieval reports."""
        corpus = generate_toy_corpus(6, 2, frames_per_seq=3, height=32, width=32, num_test_ids=3, seed=21)
        key = EncryptionKey()
        encrypted = {
            m: build_windows(corpus.test, bins=3, transform=lambda s, m=m: encrypt_stream(s, m, key, 0.75))
            for m in ("scramble", "discard")
        }
        reports = evaluate_encryption_baseline(
            encrypted, AttackerNet(3, seed=1).freeze(), ReIdNet(3, 8, 3, seed=2), ReIdNet(1, 8, 3, seed=3), SSIM
        )
        assert sorted(reports) == [
            "encrypt_discard_quality",
            "encrypt_discard_reid",
            "encrypt_discard_retrieval",
            "encrypt_scramble_quality",
            "encrypt_scramble_reid",
            "encrypt_scramble_retrieval",
        ]
        assert reports["encrypt_scramble_reid"].query_source == "encrypted"

    def test_loss_ablation_rows(self, windows, config):
        """Test one row per weighting with the documented columns."""
        rows = run_loss_ablation(windows, AttackerNet(3, seed=1).freeze(), config, [(0, 1, 1), (1, 1, 1)], SSIM)
        assert [(r.alpha, r.beta, r.gamma) for r in rows] == [(0, 1, 1), (1, 1, 1)]
        assert len(rows[0].as_row()) == len(ABLATION_HEADER)
        assert all(0.0 <= r.rank1 <= 1.0 for r in rows)
