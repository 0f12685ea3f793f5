"""PD/DD histogram similarities, CSD distance, overlap ratio."""

from __future__ import annotations

import json
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from rolledit.metrics import (
    EmptyScore,
    EmptyStroke,
    MetricError,
    MetricReport,
    ShapeMismatch,
    csd,
    dd_similarity,
    overlap_ratio,
    pd_similarity,
)
from rolledit.midi_io import Note, score_from_notes
from rolledit.roll import duration_to_bin
from rolledit.signals import (
    ControlSignals,
    LengthMismatch,
    NullSignals,
    null_signals,
)

from conftest import random_quantized_score


def _score(pitches, duration=Fraction(1)):
    notes = [Note(p, Fraction(i), duration, 80) for i, p in enumerate(pitches)]
    return score_from_notes(notes, num_bars=math.ceil(len(pitches) / 4) or 1)


def _signals(c_n, c_p=None, c_c=None):
    bars = len(c_n)
    return ControlSignals(
        c_n=np.asarray(c_n, dtype=np.float64),
        c_p=np.asarray(c_p, dtype=np.float64) if c_p is not None
        else np.zeros(128),
        c_c=np.asarray(c_c, dtype=np.int64) if c_c is not None
        else np.zeros(bars, dtype=np.int64),
    )


class TestPdSimilarity:
    def test_identity(self, rng):
        for _ in range(5):
            s = random_quantized_score(rng)
            if s.notes:
                assert pd_similarity(s, s) == pytest.approx(1.0)

    def test_disjoint_supports(self):
        assert pd_similarity(_score([60, 62]), _score([70, 71])) == 0.0

    def test_half_overlap_by_hand(self):
        # histograms [0.5, 0.5, 0] vs [0.5, 0, 0.5] intersect at 0.5
        a = _score([60, 61])
        b = _score([60, 62])
        assert pd_similarity(a, b) == pytest.approx(0.5)

    def test_symmetry_and_bounds(self, rng):
        for _ in range(20):
            a = random_quantized_score(rng)
            b = random_quantized_score(rng)
            if not a.notes or not b.notes:
                continue
            ab = pd_similarity(a, b)
            assert ab == pytest.approx(pd_similarity(b, a))
            assert 0.0 <= ab <= 1.0 + 1e-12

    def test_count_weighting(self):
        # two of three notes on 60: histogram (2/3, 1/3)
        a = _score([60, 60, 62])
        b = _score([60, 62, 62])
        assert pd_similarity(a, b) == pytest.approx(2 / 3)

    def test_empty_rejected(self):
        empty = score_from_notes([], num_bars=1)
        with pytest.raises(EmptyScore):
            pd_similarity(empty, _score([60]))
        with pytest.raises(EmptyScore):
            pd_similarity(_score([60]), empty)


class TestDdSimilarity:
    def test_identity(self):
        s = _score([60, 64, 67], duration=Fraction(1, 2))
        assert dd_similarity(s, s) == pytest.approx(1.0)

    def test_disjoint_durations(self):
        a = _score([60, 62], duration=Fraction(1))
        b = _score([60, 62], duration=Fraction(2))
        assert dd_similarity(a, b) == 0.0

    def test_matches_brute_force_histogram(self, rng):
        for _ in range(10):
            a = random_quantized_score(rng, grid=Fraction(1, 4))
            b = random_quantized_score(rng, grid=Fraction(1, 4))
            if not a.notes or not b.notes:
                continue
            ha = Counter(duration_to_bin(n.duration) for n in a.notes)
            hb = Counter(duration_to_bin(n.duration) for n in b.notes)
            want = sum(
                min(ha[k] / len(a.notes), hb[k] / len(b.notes))
                for k in set(ha) | set(hb)
            )
            assert dd_similarity(a, b) == pytest.approx(want)


class TestCsd:
    def test_identity_is_zero(self):
        sig = _signals([1.0, 2.0, 3.0])
        assert csd(sig, sig, "n") == 0.0
        assert csd(sig, sig, "p") == 0.0

    def test_orthogonal_unit_vectors(self):
        a = _signals([1.0, 0.0])
        b = _signals([0.0, 1.0])
        assert csd(a, b, "n") == pytest.approx(math.sqrt(2.0))

    def test_scale_invariance(self):
        # sum normalization first, so scaling either side changes nothing
        a = _signals([1.0, 2.0, 1.0])
        b = _signals([4.0, 8.0, 4.0])
        assert csd(a, b, "n") == pytest.approx(0.0)

    def test_zero_sum_maps_to_zero_vector(self):
        a = _signals([0.0, 0.0])
        b = _signals([1.0, 1.0])
        assert csd(a, b, "n") == pytest.approx(math.sqrt(0.5))

    def test_pitch_channel_selected(self):
        base = np.zeros(128)
        altered = base.copy()
        altered[60] = 4.0
        a = ControlSignals(c_n=np.ones(2), c_p=base,
                           c_c=np.zeros(2, dtype=np.int64))
        b = ControlSignals(c_n=np.ones(2), c_p=altered,
                           c_c=np.zeros(2, dtype=np.int64))
        assert csd(a, b, "n") == 0.0
        assert csd(a, b, "p") == pytest.approx(1.0)

    def test_triangle_inequality(self, np_rng):
        for _ in range(50):
            sigs = [_signals(np_rng.random(6)) for _ in range(3)]
            ab = csd(sigs[0], sigs[1], "n")
            bc = csd(sigs[1], sigs[2], "n")
            ac = csd(sigs[0], sigs[2], "n")
            assert ac <= ab + bc + 1e-12

    def test_null_rejected(self):
        sig = _signals([1.0])
        with pytest.raises(NullSignals):
            csd(sig, null_signals(), "n")
        with pytest.raises(NullSignals):
            csd(null_signals(), sig, "n")

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            csd(_signals([1.0, 2.0]), _signals([1.0, 2.0, 3.0]), "n")

    def test_bad_channel(self):
        sig = _signals([1.0])
        with pytest.raises(MetricError):
            csd(sig, sig, "c")


class TestOverlapRatio:
    def _roll(self, cells):
        roll = np.zeros((128, 16), dtype=np.uint8)
        for p, t in cells:
            roll[p, t] = 1
        return roll

    def test_identity(self):
        stroke = self._roll([(60, 0), (64, 4), (67, 8)])
        assert overlap_ratio(stroke, stroke) == 1.0

    def test_disjoint(self):
        gen = self._roll([(50, 1)])
        stroke = self._roll([(60, 0)])
        assert overlap_ratio(gen, stroke) == 0.0

    def test_partial(self):
        stroke = self._roll([(60, 0), (64, 4), (67, 8), (72, 12)])
        gen = self._roll([(60, 0), (67, 8), (40, 2)])
        assert overlap_ratio(gen, stroke) == pytest.approx(0.5)

    def test_monotone_in_generated(self, np_rng):
        stroke = self._roll([(60, i) for i in range(8)])
        gen = self._roll([(60, 0)])
        prev = overlap_ratio(gen, stroke)
        for i in range(1, 8):
            gen[60, i] = 1
            cur = overlap_ratio(gen, stroke)
            assert cur >= prev
            prev = cur
        assert prev == 1.0

    def test_empty_stroke_rejected(self):
        gen = self._roll([(60, 0)])
        with pytest.raises(EmptyStroke):
            overlap_ratio(gen, np.zeros((128, 16), dtype=np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            overlap_ratio(np.zeros((128, 8), dtype=np.uint8),
                          self._roll([(60, 0)]))


class TestMetricReport:
    def test_json_drops_absent_fields(self):
        report = MetricReport(pd=0.5, or_=1.0)
        payload = json.loads(report.to_json())
        assert payload == {"pd": 0.5, "or": 1.0}

    def test_json_full(self):
        report = MetricReport(pd=0.9, dd=0.8, csd_n=0.06, csd_p=0.15, or_=0.85)
        payload = json.loads(report.to_json())
        assert payload == {"pd": 0.9, "dd": 0.8, "csd_n": 0.06,
                           "csd_p": 0.15, "or": 0.85}
