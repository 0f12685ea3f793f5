"""Control signals: note density, pitch distribution, chord progression.

All three are derived from a 1-beat quantized piece. A ``ControlSignals``
value either carries all three arrays or is the null sentinel used for
unconditional model calls.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .midi_io import Score
from .roll import NUM_PITCHES, validate_roll

MAX_DENSITY = 127

CHORD_QUALITIES = ("maj", "min", "dim", "aug", "sus4", "maj7", "min7", "dom7")
_QUALITY_INTERVALS = {
    "maj": (0, 4, 7),
    "min": (0, 3, 7),
    "dim": (0, 3, 6),
    "aug": (0, 4, 8),
    "sus4": (0, 5, 7),
    "maj7": (0, 4, 7, 11),
    "min7": (0, 3, 7, 10),
    "dom7": (0, 4, 7, 10),
}
NUM_CHORDS = 12 * len(CHORD_QUALITIES)
NO_CHORD = NUM_CHORDS

_PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


def _chord_templates() -> np.ndarray:
    """(96, 12) boolean template matrix, index = root * 8 + quality."""
    templates = np.zeros((NUM_CHORDS, 12), dtype=bool)
    for root in range(12):
        for q, quality in enumerate(CHORD_QUALITIES):
            for interval in _QUALITY_INTERVALS[quality]:
                templates[root * len(CHORD_QUALITIES) + q, (root + interval) % 12] = True
    return templates


CHORD_TEMPLATES = _chord_templates()
CHORD_TEMPLATES.setflags(write=False)


class SignalError(ValueError):
    """Base class for control-signal failures."""


class NullSignals(SignalError):
    """An operation needed concrete signals but got the null sentinel."""


class LengthMismatch(SignalError):
    """Signal lengths disagree with each other or with a grid."""


def chord_index(root: int, quality: str) -> int:
    return root * len(CHORD_QUALITIES) + CHORD_QUALITIES.index(quality)


def chord_name(index: int) -> str:
    if index == NO_CHORD:
        return "N.C."
    if not 0 <= index < NUM_CHORDS:
        raise SignalError(f"chord index {index} outside 0..{NO_CHORD}")
    root, quality = divmod(index, len(CHORD_QUALITIES))
    return f"{_PITCH_NAMES[root]}:{CHORD_QUALITIES[quality]}"


@dataclass(frozen=True)
class ControlSignals:
    """Per-beat note density, per-pitch onset counts, per-beat chord indices.

    ``c_n`` has one entry per beat (counts clamped to 127), ``c_p`` one per
    MIDI pitch, ``c_c`` one chord index per beat (96 meaning no chord). The
    null sentinel, with all arrays absent, stands for "unconditional".
    """

    c_n: np.ndarray | None
    c_p: np.ndarray | None
    c_c: np.ndarray | None

    def __post_init__(self):
        arrays = (self.c_n, self.c_p, self.c_c)
        present = [a is not None for a in arrays]
        if not any(present):
            return
        if not all(present):
            raise SignalError("signals must carry all of c_n, c_p, c_c or none")
        c_n = np.ascontiguousarray(self.c_n, dtype=np.int64)
        c_p = np.ascontiguousarray(self.c_p, dtype=np.int64)
        c_c = np.ascontiguousarray(self.c_c, dtype=np.int64)
        if c_n.ndim != 1 or c_n.size < 1:
            raise SignalError(f"c_n must be a nonempty vector, got shape {c_n.shape}")
        if c_c.shape != c_n.shape:
            raise LengthMismatch(f"c_c length {c_c.shape} != c_n length {c_n.shape}")
        if c_p.shape != (NUM_PITCHES,):
            raise LengthMismatch(f"c_p must have length {NUM_PITCHES}, got {c_p.shape}")
        if c_n.min() < 0 or c_n.max() > MAX_DENSITY:
            raise SignalError("c_n entries must lie in 0..127")
        if c_p.min() < 0:
            raise SignalError("c_p entries must be non-negative")
        if c_c.min() < 0 or c_c.max() > NO_CHORD:
            raise SignalError(f"c_c entries must lie in 0..{NO_CHORD}")
        for name, arr in (("c_n", c_n), ("c_p", c_p), ("c_c", c_c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def is_null(self) -> bool:
        return self.c_n is None

    @property
    def num_beats(self) -> int:
        if self.is_null:
            raise NullSignals("null signals have no beat count")
        return self.c_n.size


def null_signals() -> ControlSignals:
    return ControlSignals(c_n=None, c_p=None, c_c=None)


def note_density(grid: np.ndarray) -> np.ndarray:
    """Onsets per beat (column sums of an onsetroll), clamped to 127."""
    grid = validate_roll(grid)
    return np.minimum(grid.sum(axis=0, dtype=np.int64), MAX_DENSITY)


def pitch_distribution(grid: np.ndarray) -> np.ndarray:
    """Onsets per pitch (row sums of an onsetroll); unclamped counts."""
    grid = validate_roll(grid)
    return grid.sum(axis=1, dtype=np.int64)


def _sounding_pitch_classes(score: Score, num_beats: int) -> np.ndarray:
    """(num_beats, 12) boolean: pitch classes sounding during each beat."""
    sounding = np.zeros((num_beats, 12), dtype=bool)
    for note in score.notes:
        start = int(note.onset)
        end = min(num_beats, start + max(1, math.ceil(note.duration)))
        sounding[start:end, note.pitch % 12] = True
    return sounding


def chord_progression(score: Score) -> np.ndarray:
    """Best template chord per beat; silent beats get the no-chord index.

    A template T scores ``|P & T| - 0.5 |P ^ T|`` against the beat's
    sounding pitch-class set P (0.5 penalty on every mismatched pitch
    class, either direction); ties resolve to the lowest chord index.
    """
    num_beats = score.num_bars * 4
    sounding = _sounding_pitch_classes(score, num_beats)
    # |P & T| - 0.5 (|P \ T| + |T \ P|)  =  P . (2T - 0.5) - 0.5 sum(T)
    templates = CHORD_TEMPLATES.astype(np.float64)
    weights = 2.0 * templates - 0.5
    scores = sounding.astype(np.float64) @ weights.T - 0.5 * templates.sum(axis=1)
    best = np.argmax(scores, axis=1).astype(np.int64)
    best[~sounding.any(axis=1)] = NO_CHORD
    return best


def extract_signals(score: Score, grid: np.ndarray | None = None) -> ControlSignals:
    """All three signals for a 1-beat quantized Score.

    ``grid`` may pass a precomputed onsetroll of the same score to avoid
    rebuilding it.
    """
    if grid is None:
        from .roll import score_to_onsetroll

        grid = score_to_onsetroll(score)
    else:
        grid = validate_roll(grid)
    if grid.shape[1] != score.num_bars * 4:
        raise LengthMismatch(
            f"grid has {grid.shape[1]} beats, score has {score.num_bars * 4}"
        )
    return ControlSignals(
        c_n=note_density(grid),
        c_p=pitch_distribution(grid),
        c_c=chord_progression(score),
    )


def signals_to_json(signals: ControlSignals) -> str:
    if signals.is_null:
        return json.dumps({"null": True})
    return json.dumps({
        "c_n": signals.c_n.tolist(),
        "c_p": signals.c_p.tolist(),
        "c_c": signals.c_c.tolist(),
    })


def signals_from_json(text: str) -> ControlSignals:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SignalError(f"invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SignalError("signals JSON must be an object")
    if payload.get("null"):
        return null_signals()
    try:
        c_n, c_p, c_c = payload["c_n"], payload["c_p"], payload["c_c"]
    except KeyError as exc:
        raise SignalError(f"signals JSON missing field {exc}") from exc
    for name, value in (("c_n", c_n), ("c_p", c_p), ("c_c", c_c)):
        if not (isinstance(value, list) and all(isinstance(v, int) for v in value)):
            raise SignalError(f"{name} must be a list of integers")
    return ControlSignals(
        c_n=np.asarray(c_n, dtype=np.int64),
        c_p=np.asarray(c_p, dtype=np.int64),
        c_c=np.asarray(c_c, dtype=np.int64),
    )
