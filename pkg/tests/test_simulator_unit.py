"""Unit tests for the contrast-threshold simulator and the toy corpus."""

import json

import numpy as np
import pytest

from evanon.errors import DataError
from evanon.events import GrayImage, read_events
from evanon.simulator import (
    EVENTS_NAME,
    MANIFEST_NAME,
    FrameSequence,
    generate_toy_corpus,
    read_corpus,
    simulate_events,
    simulate_log_frames,
    write_corpus,
    write_sequence_events,
)


class TestSimulateLogFrames:
    """Test threshold crossings between log frames."""

    def test_rising_ramp_crossings(self):
        """Test a rise from 0.05 to 0.45 at C = 0.1 crosses 0.1..0.4."""
        log_frames = np.array([[[0.05]], [[0.45]]])
        stream = simulate_log_frames(log_frames, [0, 400], 0.1)

        assert len(stream) == 4
        assert stream.p.tolist() == [1, 1, 1, 1]
        assert stream.t.tolist() == [50, 150, 250, 350]

    def test_falling_ramp_polarity(self):
        """Test a falling pixel emits negative events."""
        log_frames = np.array([[[0.45]], [[0.05]]])
        stream = simulate_log_frames(log_frames, [0, 400], 0.1)
        assert len(stream) == 4
        assert set(stream.p.tolist()) == {-1}

    def test_start_level_not_a_crossing(self):
        """Test a level equal to the start value is not counted, the end value is."""
        log_frames = np.array([[[0.2]], [[0.4]]])
        stream = simulate_log_frames(log_frames, [0, 100], 0.1)
        assert len(stream) == 2
        assert stream.t.tolist()[-1] == 100

    def test_levels_snap_despite_float_quotients(self):
        """Test values on a level count exactly even when value / C rounds below it."""
        # 0.3 / 0.1 evaluates to 2.9999999999999996
        rising_from = simulate_log_frames(np.array([[[0.3]], [[0.5]]]), [0, 200], 0.1)
        assert len(rising_from) == 2
        rising_to = simulate_log_frames(np.array([[[0.05]], [[0.3]]]), [0, 250], 0.1)
        assert len(rising_to) == 3
        assert rising_to.t.tolist()[-1] == 250

    def test_mirrored_clip_flips_polarity(self):
        """Test negated log frames give identical timestamps with opposite polarity."""
        rng = np.random.default_rng(4)
        log_frames = rng.uniform(-2.0, 2.0, size=(4, 3, 5))
        timestamps = [0, 40, 80, 120]
        bright = simulate_log_frames(log_frames, timestamps, 0.15)
        dark = simulate_log_frames(-log_frames, timestamps, 0.15)

        assert len(bright) > 0
        assert np.array_equal(bright.t, dark.t)
        assert np.array_equal(bright.x, dark.x) and np.array_equal(bright.y, dark.y)
        assert np.array_equal(bright.p, -dark.p)

    def test_constant_frames_emit_nothing(self):
        """Test an unchanging pixel produces no events."""
        log_frames = np.full((3, 2, 2), 0.33)
        assert len(simulate_log_frames(log_frames, [0, 10, 20], 0.1)) == 0

    def test_output_sorted_and_valid(self):
        """Test output passes stream validation on random frames."""
        rng = np.random.default_rng(0)
        log_frames = np.log(rng.uniform(0.01, 1.0, size=(4, 5, 7)))
        stream = simulate_log_frames(log_frames, [0, 40, 80, 120], 0.15)
        stream.validate()
        assert len(stream) > 0

    def test_invalid_threshold(self):
        """Test C <= 0 raises ValueError."""
        with pytest.raises(ValueError):
            simulate_log_frames(np.zeros((2, 1, 1)), [0, 1], 0.0)


class TestSimulateEvents:
    """Test simulation of frame sequences."""

    def test_single_frame_gives_empty_stream(self):
        """Test a one-frame sequence yields no events."""
        seq = FrameSequence([GrayImage(np.full((2, 3), 0.5))], [0], "c0", 0)
        stream = simulate_events(seq)
        assert len(stream) == 0
        assert (stream.width, stream.height) == (3, 2)

    def test_brightening_pixel_emits_positive_events(self):
        """Test a pixel brightening from 0.2 to 0.8 emits only ON events."""
        frames = [GrayImage(np.array([[0.2]])), GrayImage(np.array([[0.8]]))]
        stream = simulate_events(FrameSequence(frames, [0, 40_000], "c0", 0), C=0.2)
        # log(0.801) - log(0.201) ~ 1.38 -> 6 or 7 crossings
        assert 6 <= len(stream) <= 7
        assert set(stream.p.tolist()) == {1}

    def test_event_count_non_increasing_in_threshold(self):
        """Test raising C never adds events to a clip."""
        seq = generate_toy_corpus(4, 2, frames_per_seq=4, height=16, width=16, num_test_ids=2, seed=6).train[0]
        counts = [len(simulate_events(seq, C=c)) for c in (0.1, 0.2, 0.4)]
        assert counts[0] > 0
        assert counts == sorted(counts, reverse=True)

    def test_timestamps_must_increase(self):
        """Test sequences with non-increasing timestamps are rejected."""
        frames = [GrayImage(np.zeros((1, 1)))] * 2
        with pytest.raises(DataError):
            FrameSequence(frames, [0, 0], "c0", 0)


class TestToyCorpus:
    """Test toy corpus generation and persistence."""

    def test_splits_and_rosters(self):
        """Test identity rosters are disjoint and every camera sees every identity."""
        corpus = generate_toy_corpus(8, 2, frames_per_seq=4, num_test_ids=3, seed=1)

        assert corpus.train_ids == [0, 1, 2, 3, 4]
        assert corpus.test_ids == [5, 6, 7]
        assert len(corpus.train) == 10 and len(corpus.test) == 6
        assert {s.camera for s in corpus.test} == {"c0", "c1"}

    def test_generation_is_deterministic(self):
        """Test identical arguments give identical frames."""
        a = generate_toy_corpus(4, 2, frames_per_seq=3, seed=5)
        b = generate_toy_corpus(4, 2, frames_per_seq=3, seed=5)
        for sa, sb in zip(a.train + a.test, b.train + b.test):
            for fa, fb in zip(sa.frames, sb.frames):
                assert np.array_equal(fa.pixels, fb.pixels)

    def test_identities_differ(self):
        """Test two identities seen by the same camera look different."""
        corpus = generate_toy_corpus(4, 2, frames_per_seq=3, seed=5)
        first = [s for s in corpus.train if s.camera == "c0"]
        assert not np.array_equal(first[0].frames[0].pixels, first[1].frames[0].pixels)

    def test_invalid_arguments(self):
        """Test too few identities or cameras raise ValueError."""
        with pytest.raises(ValueError):
            generate_toy_corpus(3, 2)
        with pytest.raises(ValueError):
            generate_toy_corpus(8, 1)
        with pytest.raises(ValueError):
            generate_toy_corpus(8, 2, height=16)

    def test_write_and_read_corpus(self, tmp_path):
        """Test a written corpus reads back with the same layout."""
        corpus = generate_toy_corpus(4, 2, frames_per_seq=3, num_test_ids=1, seed=2)
        write_corpus(corpus, tmp_path)

        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
        back = read_corpus(tmp_path)
        assert manifest["test_ids"] == [3]
        assert back.train_ids == corpus.train_ids
        assert [s.key() for s in back.test] == [s.key() for s in corpus.test]
        assert (tmp_path / "train" / "id000" / "c0" / "s00" / "frame_0002.pgm").is_file()

    def test_read_missing_corpus(self, tmp_path):
        """Test reading a directory without a manifest raises DataError."""
        with pytest.raises(DataError, match="manifest"):
            read_corpus(tmp_path)

    def test_write_sequence_events(self, tmp_path):
        """Test event simulation writes one events.csv per sequence."""
        corpus = generate_toy_corpus(4, 2, frames_per_seq=3, num_test_ids=1, seed=2)
        write_corpus(corpus, tmp_path)
        total = write_sequence_events(tmp_path, 0.2)

        paths = sorted(tmp_path.rglob(EVENTS_NAME))
        assert len(paths) == 8
        assert total == sum(len(read_events(p)) for p in paths)
        assert json.loads((tmp_path / MANIFEST_NAME).read_text())["contrast_threshold"] == 0.2
