"""MIDI ingestion, the toy grammar, and the on-disk segment cache."""

from __future__ import annotations

import struct
from fractions import Fraction

import numpy as np
import pytest

from rolledit.corpus import (
    DENSITY_LEVELS,
    CorpusError,
    NoFilesFound,
    Segment,
    audit_segment,
    ingest,
    load_segments,
    make_toy_corpus,
    save_segments,
    toy_piece,
)
from rolledit.midi_io import Note, quantize, score_from_notes, write_smf
from rolledit.signals import extract_signals
from rolledit.roll import score_to_onsetroll

from conftest import random_quantized_score


def _long_score(num_bars: int):
    notes = [
        Note(60 + (bar % 12), Fraction(bar * 4), Fraction(1), 80)
        for bar in range(num_bars)
    ]
    return score_from_notes(notes, num_bars=num_bars)


def _write_fixture(path, score):
    path.write_bytes(write_smf(score))


def _smf_with_meter(numerator: int, denominator_pow: int) -> bytes:
    # Minimal one-track file: time signature, one note, end of track.
    events = bytearray()
    events += bytes([0x00, 0xFF, 0x58, 0x04, numerator, denominator_pow, 24, 8])
    events += bytes([0x00, 0x90, 60, 80])
    events += bytes([0x83, 0x60, 0x80, 60, 0])  # 480 ticks later
    events += bytes([0x00, 0xFF, 0x2F, 0x00])
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, 480)
    track = b"MTrk" + struct.pack(">I", len(events)) + bytes(events)
    return header + track


class TestIngest:
    def test_empty_directory(self, tmp_path):
        with pytest.raises(NoFilesFound):
            ingest(tmp_path)

    def test_forty_bar_file_yields_three_windows(self, tmp_path):
        _write_fixture(tmp_path / "long.mid", _long_score(40))
        segments = ingest(tmp_path)
        assert len(segments) == 3
        assert [s.window_index for s in segments] == [0, 1, 2]
        assert all(s.source_id == "long.mid" for s in segments)
        assert all(s.roll.shape == (128, 128) for s in segments)

    def test_short_file_single_padded_window(self, tmp_path):
        _write_fixture(tmp_path / "short.mid", _long_score(10))
        segments = ingest(tmp_path)
        assert len(segments) == 1

    def test_deterministic_and_ordered_by_filename(self, tmp_path, rng):
        for name in ("b.mid", "a.mid", "c.mid"):
            _write_fixture(tmp_path / name, random_quantized_score(rng))
        first = ingest(tmp_path)
        second = ingest(tmp_path)
        assert len(first) == len(second)
        for x, y in zip(first, second):
            assert x.source_id == y.source_id
            assert np.array_equal(x.roll, y.roll)
            assert x.events.tokens == y.events.tokens
        names = [s.source_id for s in first]
        assert names == sorted(names)

    def test_unreadable_file_skipped(self, tmp_path, caplog):
        (tmp_path / "bad.mid").write_bytes(b"not a midi file")
        _write_fixture(tmp_path / "good.mid", _long_score(4))
        with caplog.at_level("WARNING"):
            segments = ingest(tmp_path)
        assert len(segments) == 1
        assert "bad.mid" in caplog.text

    def test_non_common_meter_skipped(self, tmp_path, caplog):
        (tmp_path / "waltz.mid").write_bytes(_smf_with_meter(3, 2))
        _write_fixture(tmp_path / "good.mid", _long_score(4))
        with caplog.at_level("WARNING"):
            segments = ingest(tmp_path)
        assert [s.source_id for s in segments] == ["good.mid"]
        assert "waltz.mid" in caplog.text

    def test_every_segment_passes_audit(self, tmp_path):
        _write_fixture(tmp_path / "long.mid", _long_score(40))
        for segment in ingest(tmp_path):
            assert audit_segment(segment)

    def test_signals_match_onset_count(self, tmp_path):
        _write_fixture(tmp_path / "long.mid", _long_score(40))
        for segment in ingest(tmp_path):
            onsets = int(segment.roll.sum())
            assert segment.signals.c_n.sum() == onsets
            assert segment.signals.c_p.sum() == onsets


class TestToyGrammar:
    def test_same_seed_identical(self):
        a = make_toy_corpus(seed=11, size=4)
        b = make_toy_corpus(seed=11, size=4)
        assert len(a) == len(b) == 4
        for x, y in zip(a, b):
            assert np.array_equal(x.roll, y.roll)
            assert np.array_equal(x.signals.c_c, y.signals.c_c)
            assert x.events.tokens == y.events.tokens

    def test_different_seed_differs(self):
        a = make_toy_corpus(seed=11, size=4)
        b = make_toy_corpus(seed=12, size=4)
        assert any(not np.array_equal(x.roll, y.roll) for x, y in zip(a, b))

    def test_size_validation(self):
        with pytest.raises(CorpusError):
            make_toy_corpus(seed=0, size=0)

    def test_chord_extraction_recovers_grammar(self):
        rng = np.random.default_rng(77)
        total = matched = 0
        for _ in range(12):
            piece = toy_piece(rng)
            sig = extract_signals(quantize(piece.score, 1))
            total += len(sig.c_c)
            matched += int((sig.c_c == piece.intended_chords).sum())
        assert matched / total >= 0.95

    def test_density_levels_ordered(self):
        rng = np.random.default_rng(5)
        means = {level: [] for level in DENSITY_LEVELS}
        while any(len(v) < 5 for v in means.values()):
            piece = toy_piece(rng)
            roll = score_to_onsetroll(quantize(piece.score, 1))
            means[piece.density].append(roll.sum() / roll.shape[1])
        low, mid, high = (np.mean(means[level]) for level in DENSITY_LEVELS)
        assert low < mid < high

    def test_segments_pass_audit(self):
        for segment in make_toy_corpus(seed=3, size=3):
            assert audit_segment(segment)


class TestSegmentCache:
    def test_round_trip(self, tmp_path):
        segments = make_toy_corpus(seed=9, size=3)
        save_segments(segments, tmp_path / "cache")
        loaded = load_segments(tmp_path / "cache")
        assert len(loaded) == len(segments)
        for x, y in zip(segments, loaded):
            assert np.array_equal(x.roll, y.roll)
            assert np.array_equal(x.signals.c_n, y.signals.c_n)
            assert np.array_equal(x.signals.c_p, y.signals.c_p)
            assert np.array_equal(x.signals.c_c, y.signals.c_c)
            assert x.source_id == y.source_id
            assert x.window_index == y.window_index
            assert x.events.tokens == y.events.tokens

    def test_missing_cache(self, tmp_path):
        with pytest.raises(NoFilesFound):
            load_segments(tmp_path)

    def test_segment_shape_enforced(self):
        seg = make_toy_corpus(seed=1, size=1)[0]
        with pytest.raises(CorpusError):
            Segment(roll=seg.roll[:, :64], signals=seg.signals,
                    source_id="x", window_index=0, events=seg.events)
