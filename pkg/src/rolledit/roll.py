"""Onsetroll and pianoroll grids, MIDI-event tokens, and window segmentation.

Grids are uint8 arrays of shape (128, beats): pianorolls mark every beat a
note sounds, onsetrolls mark only the beat a note starts. Token sequences
are the event-level counterpart used by the refinement stage, on a 16th
note grid with binned velocity and duration.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .midi_io import BEATS_PER_BAR, DEFAULT_TICKS_PER_BEAT, Note, Score

NUM_PITCHES = 128
MAX_BARS = 32
POSITIONS_PER_BAR = 16
VELOCITY_BINS = 32
DURATION_BINS = 64
WINDOW_BEATS = MAX_BARS * BEATS_PER_BAR
HOP_BARS = 4

_ROLL_MAGIC = b"SDMR"
_ROLL_VERSION = 1


class RollError(ValueError):
    """Base class for grid and token failures."""


class TooLong(RollError):
    """The score spans more bars than a model window allows."""


class UnquantizedInput(RollError):
    """A beat value does not sit on the required grid."""


class MalformedSequence(RollError):
    """A token sequence violates the event grammar."""


def validate_roll(grid: np.ndarray) -> np.ndarray:
    """Check shape (128, n) and binary content; returns grid as uint8."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[0] != NUM_PITCHES:
        raise RollError(f"expected shape (128, n), got {grid.shape}")
    if grid.shape[1] < 1:
        raise RollError("grid has zero columns")
    if not np.isin(grid, (0, 1)).all():
        raise RollError("grid cells must be 0 or 1")
    return grid.astype(np.uint8)


def _beat_index(value: Fraction, what: str) -> int:
    if value.denominator != 1:
        raise UnquantizedInput(f"{what} {value} is not on the 1-beat grid")
    return int(value)


def _check_bars(score: Score):
    if score.num_bars > MAX_BARS:
        raise TooLong(f"{score.num_bars} bars exceeds the {MAX_BARS}-bar window")


def score_to_pianoroll(score: Score) -> np.ndarray:
    """Mark every (pitch, beat) cell a note covers. Requires 1-beat onsets."""
    _check_bars(score)
    grid = np.zeros((NUM_PITCHES, score.num_bars * BEATS_PER_BAR), dtype=np.uint8)
    for note in score.notes:
        start = _beat_index(note.onset, "onset")
        grid[note.pitch, start:start + max(1, math.ceil(note.duration))] = 1
    return grid


def score_to_onsetroll(score: Score) -> np.ndarray:
    """Mark only the starting beat of each note. Requires 1-beat onsets."""
    _check_bars(score)
    grid = np.zeros((NUM_PITCHES, score.num_bars * BEATS_PER_BAR), dtype=np.uint8)
    for note in score.notes:
        grid[note.pitch, _beat_index(note.onset, "onset")] = 1
    return grid


class DurationRule(enum.Enum):
    """How onsetroll_to_score assigns durations to bare onsets."""

    UNTIL_NEXT = "until-next"
    FIXED_ONE = "fixed-one"


def onsetroll_to_score(
    grid: np.ndarray,
    velocity: int = 80,
    rule: DurationRule = DurationRule.UNTIL_NEXT,
    max_duration: int = 4,
    ticks_per_beat: int = DEFAULT_TICKS_PER_BEAT,
) -> Score:
    """Inverse of score_to_onsetroll up to velocity and duration.

    UNTIL_NEXT holds each onset to the next onset of the same pitch, capped
    at ``max_duration`` beats and at the end of the grid; FIXED_ONE gives
    every note exactly one beat.
    """
    grid = validate_roll(grid)
    n = grid.shape[1]
    num_bars = max(1, -(-n // BEATS_PER_BAR))
    notes = []
    for pitch in np.flatnonzero(grid.any(axis=1)):
        onsets = np.flatnonzero(grid[pitch])
        ends = np.append(onsets[1:], n)
        for start, limit in zip(onsets, ends):
            if rule is DurationRule.FIXED_ONE:
                duration = 1
            else:
                duration = min(max_duration, max(1, int(limit) - int(start)))
            notes.append(Note(int(pitch), Fraction(int(start)), Fraction(duration), velocity))
    return Score(notes=tuple(notes), ticks_per_beat=ticks_per_beat, num_bars=num_bars)


def roll_to_bytes(grid: np.ndarray) -> bytes:
    """Pack a grid into the binary container (magic, version, m, n, bits)."""
    grid = validate_roll(grid)
    m, n = grid.shape
    header = _ROLL_MAGIC + struct.pack(">BHI", _ROLL_VERSION, m, n)
    return header + np.packbits(grid.reshape(-1)).tobytes()


def roll_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 11 or data[:4] != _ROLL_MAGIC:
        raise RollError("not a roll container (bad magic)")
    version, m, n = struct.unpack(">BHI", data[4:11])
    if version != _ROLL_VERSION:
        raise RollError(f"unsupported roll version {version}")
    expected = -(-m * n // 8)
    body = data[11:]
    if len(body) != expected:
        raise RollError(f"expected {expected} payload bytes, got {len(body)}")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=m * n)
    return validate_roll(bits.reshape(m, n))


def roll_to_obj(grid: np.ndarray) -> dict:
    grid = validate_roll(grid)
    pitches, beats = np.nonzero(grid)
    cells = sorted([int(p), int(b)] for p, b in zip(pitches, beats))
    return {"m": grid.shape[0], "n": grid.shape[1], "cells": cells}


def roll_to_json(grid: np.ndarray) -> str:
    return json.dumps(roll_to_obj(grid))


def roll_from_obj(payload) -> np.ndarray:
    if not isinstance(payload, dict):
        raise RollError("roll JSON must be an object")
    try:
        m, n, cells = int(payload["m"]), int(payload["n"]), payload["cells"]
    except (KeyError, TypeError, ValueError) as exc:
        raise RollError(f"roll JSON missing or invalid field: {exc}") from exc
    grid = np.zeros((m, n), dtype=np.uint8)
    if not isinstance(cells, list):
        raise RollError("cells must be a list of [pitch, beat] pairs")
    for cell in cells:
        if not isinstance(cell, list) or len(cell) != 2:
            raise RollError(f"bad cell {cell!r}")
        p, b = cell
        if not (isinstance(p, int) and isinstance(b, int) and 0 <= p < m and 0 <= b < n):
            raise RollError(f"cell {cell!r} out of range for {m}x{n}")
        grid[p, b] = 1
    return validate_roll(grid)


def roll_from_json(text: str) -> np.ndarray:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RollError(f"invalid JSON: {exc}") from exc
    return roll_from_obj(payload)


class TokenKind(enum.Enum):
    PAD = "PAD"
    BOS = "BOS"
    EOS = "EOS"
    BAR = "BAR"
    POS = "POS"
    NOTE = "NOTE"


@dataclass(frozen=True)
class Token:
    """One event token. POS carries ``position``; NOTE carries the rest."""

    kind: TokenKind
    position: int | None = None
    pitch: int | None = None
    velocity_bin: int | None = None
    duration_bin: int | None = None

    def __post_init__(self):
        if self.kind is TokenKind.POS:
            if self.position is None or not 0 <= self.position < POSITIONS_PER_BAR:
                raise MalformedSequence(f"POS token with position {self.position}")
        elif self.kind is TokenKind.NOTE:
            ok = (
                self.pitch is not None and 0 <= self.pitch < NUM_PITCHES
                and self.velocity_bin is not None
                and 0 <= self.velocity_bin < VELOCITY_BINS
                and self.duration_bin is not None
                and 0 <= self.duration_bin < DURATION_BINS
            )
            if not ok:
                raise MalformedSequence(f"NOTE token with invalid fields: {self}")


PAD = Token(TokenKind.PAD)
BOS = Token(TokenKind.BOS)
EOS = Token(TokenKind.EOS)
BAR = Token(TokenKind.BAR)


def pos_token(position: int) -> Token:
    return Token(TokenKind.POS, position=position)


def note_token(pitch: int, velocity_bin: int, duration_bin: int) -> Token:
    return Token(TokenKind.NOTE, pitch=pitch, velocity_bin=velocity_bin,
                 duration_bin=duration_bin)


# Structural vocabulary: PAD, BOS, EOS, BAR, 16 POS slots, NOTE.
STRUCT_PAD = 0
STRUCT_BOS = 1
STRUCT_EOS = 2
STRUCT_BAR = 3
STRUCT_POS_BASE = 4
STRUCT_NOTE = STRUCT_POS_BASE + POSITIONS_PER_BAR
STRUCT_VOCAB = STRUCT_NOTE + 1


def struct_id(token: Token) -> int:
    """Map a token to its id in the structural vocabulary."""
    if token.kind is TokenKind.PAD:
        return STRUCT_PAD
    if token.kind is TokenKind.BOS:
        return STRUCT_BOS
    if token.kind is TokenKind.EOS:
        return STRUCT_EOS
    if token.kind is TokenKind.BAR:
        return STRUCT_BAR
    if token.kind is TokenKind.POS:
        return STRUCT_POS_BASE + token.position
    return STRUCT_NOTE


def velocity_to_bin(velocity: int) -> int:
    if not 1 <= velocity <= 127:
        raise RollError(f"velocity {velocity} outside 1..127")
    return (velocity - 1) * VELOCITY_BINS // 127


def velocity_from_bin(bin_index: int) -> int:
    """Center of the bin, so binning the result returns the same bin."""
    if not 0 <= bin_index < VELOCITY_BINS:
        raise RollError(f"velocity bin {bin_index} outside 0..{VELOCITY_BINS - 1}")
    return 1 + (2 * bin_index + 1) * 127 // (2 * VELOCITY_BINS)


def duration_to_bin(duration: Fraction) -> int:
    steps = duration * (POSITIONS_PER_BAR // BEATS_PER_BAR)
    if steps.denominator != 1:
        raise UnquantizedInput(f"duration {duration} is not on the 16th grid")
    return min(DURATION_BINS, max(1, int(steps))) - 1


def duration_from_bin(bin_index: int) -> Fraction:
    if not 0 <= bin_index < DURATION_BINS:
        raise RollError(f"duration bin {bin_index} outside 0..{DURATION_BINS - 1}")
    return Fraction(bin_index + 1, POSITIONS_PER_BAR // BEATS_PER_BAR)


@dataclass(frozen=True)
class MidiEventSequence:
    """A grammar-checked token sequence: BOS, bars of POS/NOTE runs, EOS."""

    tokens: tuple[Token, ...]

    def __post_init__(self):
        _check_grammar(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def num_bars(self) -> int:
        return sum(1 for t in self.tokens if t.kind is TokenKind.BAR)


def _check_grammar(tokens: tuple[Token, ...]):
    if len(tokens) < 3:
        raise MalformedSequence("sequence needs at least BOS, BAR, EOS")
    if tokens[0].kind is not TokenKind.BOS:
        raise MalformedSequence("sequence must start with BOS")
    if tokens[-1].kind is not TokenKind.EOS:
        raise MalformedSequence("sequence must end with EOS")
    bars = 0
    position = None
    for i, token in enumerate(tokens[1:-1], start=1):
        kind = token.kind
        if kind in (TokenKind.BOS, TokenKind.EOS, TokenKind.PAD):
            raise MalformedSequence(f"{kind.value} at interior index {i}")
        if kind is TokenKind.BAR:
            bars += 1
            if bars > MAX_BARS:
                raise MalformedSequence(f"more than {MAX_BARS} bars")
            position = None
        elif kind is TokenKind.POS:
            if bars == 0:
                raise MalformedSequence(f"POS before any BAR at index {i}")
            if position is not None and token.position <= position:
                raise MalformedSequence(
                    f"POS {token.position} not increasing at index {i}"
                )
            position = token.position
        else:
            if position is None:
                raise MalformedSequence(f"NOTE with no active POS at index {i}")
    if bars == 0:
        raise MalformedSequence("sequence contains no BAR")


def tokenize(score: Score) -> MidiEventSequence:
    """Linearize a 16th-quantized Score: per bar, ascending POS, NOTEs by pitch."""
    if score.num_bars > MAX_BARS:
        raise TooLong(f"{score.num_bars} bars exceeds the {MAX_BARS}-bar window")
    grid = Fraction(BEATS_PER_BAR, POSITIONS_PER_BAR)
    by_slot: dict[tuple[int, int], list[Note]] = {}
    for note in score.notes:
        steps = note.onset / grid
        if steps.denominator != 1:
            raise UnquantizedInput(f"onset {note.onset} is not on the 16th grid")
        slot = int(steps)
        by_slot.setdefault((slot // POSITIONS_PER_BAR, slot % POSITIONS_PER_BAR),
                           []).append(note)

    tokens = [BOS]
    for bar in range(score.num_bars):
        tokens.append(BAR)
        for position in range(POSITIONS_PER_BAR):
            slot_notes = by_slot.get((bar, position))
            if not slot_notes:
                continue
            tokens.append(pos_token(position))
            for note in slot_notes:
                tokens.append(note_token(
                    note.pitch,
                    velocity_to_bin(note.velocity),
                    duration_to_bin(note.duration),
                ))
    tokens.append(EOS)
    return MidiEventSequence(tokens=tuple(tokens))


def detokenize(seq: MidiEventSequence,
               ticks_per_beat: int = DEFAULT_TICKS_PER_BEAT) -> Score:
    """Rebuild the Score a token sequence describes."""
    grid = Fraction(BEATS_PER_BAR, POSITIONS_PER_BAR)
    notes = []
    bar = -1
    position = None
    for token in seq.tokens[1:-1]:
        if token.kind is TokenKind.BAR:
            bar += 1
            position = None
        elif token.kind is TokenKind.POS:
            position = token.position
        else:
            onset = bar * BEATS_PER_BAR + position * grid
            notes.append(Note(
                token.pitch,
                onset,
                duration_from_bin(token.duration_bin),
                velocity_from_bin(token.velocity_bin),
            ))
    end = max((n.end for n in notes), default=Fraction(0))
    num_bars = max(bar + 1, math.ceil(end / BEATS_PER_BAR))
    return Score(notes=tuple(notes), ticks_per_beat=ticks_per_beat,
                 num_bars=num_bars)


def segment_windows(score: Score) -> list[Score]:
    """Cut a quantized Score into 32-bar windows with a 4-bar hop.

    Scores shorter than one window yield a single zero-padded window. Notes
    are clipped so nothing crosses a window's right edge.
    """
    starts = [0]
    if score.num_bars > MAX_BARS:
        count = (score.num_bars - MAX_BARS) // HOP_BARS + 1
        starts = [i * HOP_BARS for i in range(count)]
    windows = []
    for start_bar in starts:
        t0 = Fraction(start_bar * BEATS_PER_BAR)
        t1 = t0 + WINDOW_BEATS
        notes = []
        for note in score.notes:
            if t0 <= note.onset < t1:
                duration = min(note.duration, t1 - note.onset)
                notes.append(Note(note.pitch, note.onset - t0, duration,
                                  note.velocity))
        windows.append(Score(notes=tuple(notes),
                             ticks_per_beat=score.ticks_per_beat,
                             num_bars=MAX_BARS))
    return windows
