"""Training-data plumbing: MIDI ingestion into 32-bar segments, a seeded
toy-corpus generator, and a flat on-disk segment cache.

The toy grammar writes 32-bar pieces in a random major key: eight 4-bar
phrases, each with a diatonic progression and an accompaniment pattern,
plus density-controlled decoration layers. Every layer uses chord tones
only and each bar keeps its full triad sounding, so the chord extractor
recovers the grammar's intended progression and density levels stay
cleanly ordered.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .midi_io import BEATS_PER_BAR, MidiError, Note, Score, parse_smf, quantize, \
    scan_time_signatures
from .roll import MAX_BARS, MidiEventSequence, Token, TokenKind, WINDOW_BEATS, \
    note_token, pos_token, roll_from_bytes, roll_to_bytes, score_to_onsetroll, \
    segment_windows, tokenize, BOS, EOS, BAR
from .signals import ControlSignals, chord_index, extract_signals, signals_from_json, \
    signals_to_json

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Base class for corpus failures."""


class NoFilesFound(CorpusError):
    """The ingest directory holds no .mid files."""


class EmptyCorpus(CorpusError):
    """A training call received no segments."""


@dataclass(frozen=True)
class Segment:
    """One 32-bar training unit: roll, signals, and the event sequence."""

    roll: np.ndarray
    signals: ControlSignals
    source_id: str
    window_index: int
    events: MidiEventSequence

    def __post_init__(self):
        if self.roll.shape != (128, WINDOW_BEATS):
            raise CorpusError(f"segment roll must be 128x{WINDOW_BEATS}, "
                              f"got {self.roll.shape}")


def audit_segment(segment: Segment) -> bool:
    """Check that the stored signals match a fresh extraction of the roll."""
    from .roll import detokenize

    score = quantize(detokenize(segment.events), 1)
    fresh = extract_signals(score, grid=segment.roll)
    return (
        np.array_equal(fresh.c_n, segment.signals.c_n)
        and np.array_equal(fresh.c_p, segment.signals.c_p)
        and np.array_equal(fresh.c_c, segment.signals.c_c)
    )


def _window_starts(num_bars: int) -> list[int]:
    if num_bars <= MAX_BARS:
        return [0]
    return [i * 4 for i in range((num_bars - MAX_BARS) // 4 + 1)]


def _segments_from_score(score: Score, source_id: str) -> list[Segment]:
    beat_score = quantize(score, 1)
    event_score = quantize(score, Fraction(1, 4))
    rolls = segment_windows(beat_score)
    events = segment_windows(event_score)
    segments = []
    for index, roll_window in enumerate(rolls):
        grid = score_to_onsetroll(roll_window)
        event_window = events[index] if index < len(events) else rolls[index]
        segments.append(Segment(
            roll=grid,
            signals=extract_signals(roll_window, grid=grid),
            source_id=source_id,
            window_index=index,
            events=tokenize(event_window),
        ))
    return segments


def ingest(directory) -> list[Segment]:
    """Parse every .mid file under ``directory`` into training segments.

    Files that fail to parse, or that declare a meter other than 4/4, are
    skipped with a warning. Output order is by filename then window index.
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.mid"))
    if not paths:
        raise NoFilesFound(f"no .mid files in {directory}")
    segments = []
    for path in paths:
        data = path.read_bytes()
        try:
            meters = scan_time_signatures(data)
            if any(meter != (4, 4) for meter in meters):
                log.warning("skipping %s: meter %s is not 4/4", path.name,
                            next(m for m in meters if m != (4, 4)))
                continue
            score = parse_smf(data)
        except MidiError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        segments.extend(_segments_from_score(score, path.name))
    return segments


# Toy grammar tables. Scale degrees index the major scale; the five
# progressions avoid the diminished vii triad so every bar is maj or min.
_MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
_DEGREE_QUALITY = ("maj", "min", "min", "maj", "maj", "min")
_PROGRESSIONS = (
    (0, 4, 5, 3),
    (0, 3, 4, 4),
    (5, 3, 0, 4),
    (0, 5, 1, 4),
    (0, 3, 0, 4),
)
_PATTERNS = ("block", "arp_up", "alberti", "arp_down")
DENSITY_LEVELS = ("low", "mid", "high")

# Layer velocities sit on velocity-bin centers.
_VEL_PAD = 50
_VEL_PATTERN = 62
_VEL_MELODY = 74

_PHRASE_BARS = 4
_NUM_PHRASES = MAX_BARS // _PHRASE_BARS


@dataclass(frozen=True)
class ToyPiece:
    """A generated piece plus the grammar's ground truth for audits."""

    score: Score
    intended_chords: np.ndarray
    density: str


def _triad(key: int, degree: int) -> tuple[int, str]:
    root_pc = (key + _MAJOR_SCALE[degree]) % 12
    return root_pc, _DEGREE_QUALITY[degree]


def _triad_pitches(root_pc: int, quality: str, base: int) -> tuple[int, int, int]:
    third = 4 if quality == "maj" else 3
    root = base + root_pc
    return root, root + third, root + 7


def toy_piece(rng: np.random.Generator) -> ToyPiece:
    """Draw one 32-bar piece from the grammar using ``rng`` for all choices."""
    key = int(rng.integers(12))
    density = DENSITY_LEVELS[int(rng.integers(len(DENSITY_LEVELS)))]
    notes: list[Note] = []
    intended = np.empty(MAX_BARS * BEATS_PER_BAR, dtype=np.int64)

    for phrase in range(_NUM_PHRASES):
        progression = _PROGRESSIONS[int(rng.integers(len(_PROGRESSIONS)))]
        pattern = _PATTERNS[int(rng.integers(len(_PATTERNS)))]
        for bar_in_phrase, degree in enumerate(progression):
            bar = phrase * _PHRASE_BARS + bar_in_phrase
            start = Fraction(bar * BEATS_PER_BAR)
            root_pc, quality = _triad(key, degree)
            intended[bar * 4:bar * 4 + 4] = chord_index(root_pc, quality)

            # Harmony pad: the full triad held for the whole bar.
            for pitch in _triad_pitches(root_pc, quality, 48):
                notes.append(Note(pitch, start, Fraction(4), _VEL_PAD))

            if density == "low":
                continue

            # Pattern layer, one octave up.
            root, third, fifth = _triad_pitches(root_pc, quality, 60)
            if pattern == "block":
                for beat in (0, 2):
                    for pitch in (root, third, fifth):
                        notes.append(Note(pitch, start + beat, Fraction(2),
                                          _VEL_PATTERN))
            else:
                order = {
                    "arp_up": (root, third, fifth, root + 12),
                    "alberti": (root, fifth, third, fifth),
                    "arp_down": (root + 12, fifth, third, root),
                }[pattern]
                for beat, pitch in enumerate(order):
                    notes.append(Note(pitch, start + beat, Fraction(1),
                                      _VEL_PATTERN))

            if density != "high":
                continue

            # Melody layer two octaves up, plus an occasional 16th grace
            # note a further octave up; both stay on chord tones.
            tones = _triad_pitches(root_pc, quality, 84)
            for beat in range(BEATS_PER_BAR):
                choice = int(rng.integers(3))
                notes.append(Note(tones[choice], start + beat, Fraction(1),
                                  _VEL_MELODY))
            if rng.random() < 0.5:
                beat = int(rng.integers(BEATS_PER_BAR))
                tone = int(rng.integers(3))
                notes.append(Note(tones[tone] + 12, start + beat + Fraction(1, 4),
                                  Fraction(1, 4), _VEL_MELODY))
            # Bass root under the pad.
            notes.append(Note(36 + root_pc, start, Fraction(2), _VEL_PATTERN))
            notes.append(Note(36 + root_pc, start + 2, Fraction(2), _VEL_PATTERN))

    score = Score(notes=tuple(notes), ticks_per_beat=480, num_bars=MAX_BARS)
    return ToyPiece(score=score, intended_chords=intended, density=density)


def make_toy_corpus(seed: int, size: int) -> list[Segment]:
    """Generate ``size`` deterministic toy segments from one seeded stream."""
    if size < 1:
        raise CorpusError(f"size {size} must be >= 1")
    rng = np.random.default_rng(seed)
    segments = []
    for index in range(size):
        piece = toy_piece(rng)
        segments.extend(_segments_from_score(piece.score, f"toy-{seed}-{index}"))
    return segments


def _token_to_string(token: Token) -> str:
    if token.kind is TokenKind.POS:
        return f"POS:{token.position}"
    if token.kind is TokenKind.NOTE:
        return f"NOTE:{token.pitch}:{token.velocity_bin}:{token.duration_bin}"
    return token.kind.value


def _token_from_string(text: str) -> Token:
    parts = text.split(":")
    if parts[0] == "POS" and len(parts) == 2:
        return pos_token(int(parts[1]))
    if parts[0] == "NOTE" and len(parts) == 4:
        return note_token(int(parts[1]), int(parts[2]), int(parts[3]))
    simple = {"PAD": Token(TokenKind.PAD), "BOS": BOS, "EOS": EOS, "BAR": BAR}
    if text in simple:
        return simple[text]
    raise CorpusError(f"bad token string {text!r}")


def save_segments(segments: list[Segment], directory) -> None:
    """Write one .roll plus one .json sidecar per segment."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, seg in enumerate(segments):
        stem = directory / f"seg-{i:05d}"
        stem.with_suffix(".roll").write_bytes(roll_to_bytes(seg.roll))
        sidecar = {
            "source_id": seg.source_id,
            "window_index": seg.window_index,
            "signals": json.loads(signals_to_json(seg.signals)),
            "tokens": [_token_to_string(t) for t in seg.events.tokens],
        }
        stem.with_suffix(".json").write_text(json.dumps(sidecar))


def load_segments(directory) -> list[Segment]:
    directory = Path(directory)
    stems = sorted(p.with_suffix("") for p in directory.glob("seg-*.roll"))
    if not stems:
        raise NoFilesFound(f"no cached segments in {directory}")
    segments = []
    for stem in stems:
        sidecar = json.loads(stem.with_suffix(".json").read_text())
        segments.append(Segment(
            roll=roll_from_bytes(stem.with_suffix(".roll").read_bytes()),
            signals=signals_from_json(json.dumps(sidecar["signals"])),
            source_id=sidecar["source_id"],
            window_index=int(sidecar["window_index"]),
            events=MidiEventSequence(tokens=tuple(
                _token_from_string(t) for t in sidecar["tokens"]
            )),
        ))
    return segments
