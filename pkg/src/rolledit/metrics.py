"""Objective metrics: PD/DD histogram similarities, CSD, overlap ratio.

PD and DD are histogram intersections of normalized pitch / duration-bin
histograms, so both are symmetric, live in [0,1], and hit 1 exactly when
the normalized histograms agree. CSD is the L2 distance between sum
normalized signal vectors. OR counts how much of the user's stroke
survives into the generated roll.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .midi_io import Score
from .roll import DURATION_BINS, NUM_PITCHES, duration_to_bin, validate_roll
from .signals import ControlSignals, LengthMismatch, NullSignals


class MetricError(ValueError):
    """Base class for metric failures."""


class EmptyScore(MetricError):
    """A distribution metric needs at least one note on both sides."""


class EmptyStroke(MetricError):
    """overlap_ratio needs a non-empty stroke."""


class ShapeMismatch(MetricError):
    """Two rolls that must agree in shape do not."""


@dataclass(frozen=True)
class MetricReport:
    """Optional metric values; absent ones stay None."""

    pd: float | None = None
    dd: float | None = None
    csd_n: float | None = None
    csd_p: float | None = None
    or_: float | None = None

    def to_json(self) -> str:
        payload = {
            "pd": self.pd,
            "dd": self.dd,
            "csd_n": self.csd_n,
            "csd_p": self.csd_p,
            "or": self.or_,
        }
        return json.dumps({k: v for k, v in payload.items() if v is not None})


def _pitch_histogram(score: Score) -> np.ndarray:
    if not score.notes:
        raise EmptyScore("score has no notes")
    hist = np.zeros(NUM_PITCHES, dtype=np.float64)
    for note in score.notes:
        hist[note.pitch] += 1.0
    return hist / hist.sum()


def _duration_histogram(score: Score) -> np.ndarray:
    if not score.notes:
        raise EmptyScore("score has no notes")
    hist = np.zeros(DURATION_BINS, dtype=np.float64)
    for note in score.notes:
        hist[duration_to_bin(note.duration)] += 1.0
    return hist / hist.sum()


def _intersection(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.minimum(p, q).sum())


def pd_similarity(a: Score, b: Score) -> float:
    """Histogram intersection of the normalized 128-bin pitch histograms."""
    return _intersection(_pitch_histogram(a), _pitch_histogram(b))


def dd_similarity(a: Score, b: Score) -> float:
    """Histogram intersection of the normalized 64-bin duration histograms."""
    return _intersection(_duration_histogram(a), _duration_histogram(b))


def _sum_normalize(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.float64)
    total = v.sum()
    return v / total if total > 0 else np.zeros_like(v)


def csd(a: ControlSignals, b: ControlSignals, which: str) -> float:
    """L2 distance between sum-normalized c_n ("n") or c_p ("p") vectors."""
    if a.is_null or b.is_null:
        raise NullSignals("csd needs concrete signals on both sides")
    if which not in ("n", "p"):
        raise MetricError(f"which must be 'n' or 'p', got {which!r}")
    u = a.c_n if which == "n" else a.c_p
    v = b.c_n if which == "n" else b.c_p
    if u.shape != v.shape:
        raise LengthMismatch(f"signal lengths differ: {u.shape} vs {v.shape}")
    return float(np.linalg.norm(_sum_normalize(u) - _sum_normalize(v)))


def overlap_ratio(generated: np.ndarray, stroke: np.ndarray) -> float:
    """Fraction of stroke cells that are set in the generated roll."""
    generated = validate_roll(generated)
    stroke = validate_roll(stroke)
    if generated.shape != stroke.shape:
        raise ShapeMismatch(f"shapes differ: {generated.shape} vs {stroke.shape}")
    stroke_count = int(stroke.sum())
    if stroke_count == 0:
        raise EmptyStroke("stroke roll has no set cells")
    return float((generated & stroke).sum() / stroke_count)
