"""Standard MIDI File reading and writing, plus beat-grid quantization.

Only what the rest of the package needs: format 0 and 1 files, notes with
onset/duration measured in beats, 4/4 bars. Times are kept as exact
``Fraction`` values so that write -> parse round trips are lossless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

BEATS_PER_BAR = 4
DEFAULT_TICKS_PER_BEAT = 480

_NOTE_OFF = 0x80
_NOTE_ON = 0x90
_META = 0xFF
_META_END_OF_TRACK = 0x2F
_META_TIME_SIGNATURE = 0x58

# Data-byte counts for channel messages, keyed by the high status nibble.
_CHANNEL_DATA_BYTES = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


class MidiError(ValueError):
    """Base class for MIDI parsing and validation failures."""


class MalformedHeader(MidiError):
    """The file does not start with a usable MThd header."""


class TruncatedChunk(MidiError):
    """A chunk body ends before its declared length."""


class UnsupportedFormat(MidiError):
    """The file is valid SMF but outside the supported subset."""


def _as_beats(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise MidiError(f"non-finite beat value {value!r}")
        return Fraction(value)
    raise MidiError(f"cannot interpret {value!r} as beats")


@dataclass(frozen=True)
class Note:
    """One note: MIDI pitch, onset and duration in beats, velocity 1..127."""

    pitch: int
    onset: Fraction
    duration: Fraction
    velocity: int

    def __post_init__(self):
        object.__setattr__(self, "onset", _as_beats(self.onset))
        object.__setattr__(self, "duration", _as_beats(self.duration))
        if not 0 <= self.pitch <= 127:
            raise MidiError(f"pitch {self.pitch} outside 0..127")
        if not 1 <= self.velocity <= 127:
            raise MidiError(f"velocity {self.velocity} outside 1..127")
        if self.onset < 0:
            raise MidiError(f"onset {self.onset} is negative")
        if self.duration <= 0:
            raise MidiError(f"duration {self.duration} is not positive")

    @property
    def end(self) -> Fraction:
        return self.onset + self.duration

    def sort_key(self):
        return (self.onset, self.pitch, self.duration, self.velocity)


@dataclass(frozen=True)
class Score:
    """An ordered collection of notes on a fixed 4/4 bar grid.

    Notes are stored sorted by (onset, pitch, duration, velocity). Every
    onset and duration must be exactly representable at ``ticks_per_beat``,
    and every note must end within ``num_bars`` bars.
    """

    notes: tuple[Note, ...]
    ticks_per_beat: int = DEFAULT_TICKS_PER_BEAT
    num_bars: int = 1

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(sorted(self.notes, key=Note.sort_key)))
        if self.ticks_per_beat < 1:
            raise MidiError(f"ticks_per_beat {self.ticks_per_beat} must be >= 1")
        if self.num_bars < 1:
            raise MidiError(f"num_bars {self.num_bars} must be >= 1")
        limit = self.total_beats
        for note in self.notes:
            if note.end > limit:
                raise MidiError(
                    f"note ending at beat {note.end} exceeds {self.num_bars} bars"
                )
            for beats in (note.onset, note.duration):
                ticks = beats * self.ticks_per_beat
                if ticks.denominator != 1:
                    raise MidiError(
                        f"beat value {beats} is not a whole number of ticks "
                        f"at {self.ticks_per_beat} ticks per beat"
                    )

    @property
    def total_beats(self) -> Fraction:
        return Fraction(self.num_bars * BEATS_PER_BAR)

    def __len__(self) -> int:
        return len(self.notes)


def score_from_notes(notes, ticks_per_beat: int = DEFAULT_TICKS_PER_BEAT,
                     num_bars: int | None = None) -> Score:
    """Build a Score, inferring ``num_bars`` from the last note end if absent."""
    notes = tuple(notes)
    if num_bars is None:
        end = max((n.end for n in notes), default=Fraction(0))
        num_bars = max(1, math.ceil(end / BEATS_PER_BAR))
    return Score(notes=notes, ticks_per_beat=ticks_per_beat, num_bars=num_bars)


class _Reader:
    """Byte cursor with the big-endian primitives SMF chunks are made of."""

    def __init__(self, data: bytes, start: int, end: int):
        self.data = data
        self.pos = start
        self.end = end

    def remaining(self) -> int:
        return self.end - self.pos

    def read(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedChunk(
                f"needed {n} bytes at offset {self.pos}, chunk ends at {self.end}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def read_u8(self) -> int:
        return self.read(1)[0]

    def read_vlq(self) -> int:
        """Variable-length quantity: 7 bits per byte, high bit continues."""
        value = 0
        for _ in range(4):
            byte = self.read_u8()
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise MidiError(f"variable-length quantity longer than 4 bytes at {self.pos}")


def _parse_track(data: bytes, start: int, end: int):
    """Yield (tick, status, data_bytes) for one MTrk body, honoring running status."""
    reader = _Reader(data, start, end)
    tick = 0
    running = None
    while reader.remaining() > 0:
        tick += reader.read_vlq()
        byte = reader.read_u8()
        if byte == _META:
            running = None
            meta_type = reader.read_u8()
            length = reader.read_vlq()
            payload = reader.read(length)
            yield tick, _META, bytes([meta_type]) + payload
            if meta_type == _META_END_OF_TRACK:
                return
        elif byte in (0xF0, 0xF7):
            running = None
            reader.read(reader.read_vlq())
        elif byte & 0x80:
            running = byte
            count = _CHANNEL_DATA_BYTES.get(byte >> 4)
            if count is None:
                raise MidiError(f"unknown status byte {byte:#x}")
            yield tick, byte, reader.read(count)
        else:
            if running is None:
                raise MidiError(f"data byte {byte:#x} with no running status")
            count = _CHANNEL_DATA_BYTES[running >> 4]
            rest = reader.read(count - 1)
            yield tick, running, bytes([byte]) + rest


def _collect_notes(events, ticks_per_beat: int, track_end_tick: int):
    """Pair note-ons with note-offs (FIFO per channel and pitch)."""
    notes = []
    open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for tick, status, payload in events:
        kind = status >> 4
        channel = status & 0x0F
        if kind == 0x9 and payload[1] > 0:
            open_notes.setdefault((channel, payload[0]), []).append((tick, payload[1]))
        elif kind == 0x8 or (kind == 0x9 and payload[1] == 0):
            stack = open_notes.get((channel, payload[0]))
            if stack:
                on_tick, velocity = stack.pop(0)
                if tick > on_tick:
                    notes.append((on_tick, payload[0], tick - on_tick, velocity))
    for (_, pitch), stack in open_notes.items():
        for on_tick, velocity in stack:
            notes.append((on_tick, pitch, ticks_per_beat, velocity))
    beat = lambda t: Fraction(t, ticks_per_beat)
    return [
        Note(pitch=p, onset=beat(on), duration=beat(d), velocity=v)
        for on, p, d, v in notes
    ]


def parse_smf(data: bytes) -> Score:
    """Parse SMF bytes into a Score.

    Raises MalformedHeader when the MThd chunk is unusable, TruncatedChunk
    when a chunk body is shorter than declared, and UnsupportedFormat for
    format 2 files or SMPTE time division.
    """
    if len(data) < 14:
        raise MalformedHeader(f"file is {len(data)} bytes, header needs 14")
    if data[:4] != b"MThd":
        raise MalformedHeader(f"bad magic {data[:4]!r}")
    header_len = int.from_bytes(data[4:8], "big")
    if header_len < 6:
        raise MalformedHeader(f"header length {header_len} < 6")
    if len(data) < 8 + header_len:
        raise TruncatedChunk("header chunk shorter than declared")
    fmt = int.from_bytes(data[8:10], "big")
    num_tracks = int.from_bytes(data[10:12], "big")
    division = int.from_bytes(data[12:14], "big")
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"format {fmt} not supported")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division not supported")
    if division == 0:
        raise MalformedHeader("time division is zero")

    notes: list[Note] = []
    end_tick = 0
    pos = 8 + header_len
    tracks_seen = 0
    while tracks_seen < num_tracks:
        if pos + 8 > len(data):
            raise TruncatedChunk(
                f"expected {num_tracks} tracks, file ends after {tracks_seen}"
            )
        chunk_id = data[pos:pos + 4]
        chunk_len = int.from_bytes(data[pos + 4:pos + 8], "big")
        body_start = pos + 8
        body_end = body_start + chunk_len
        if body_end > len(data):
            raise TruncatedChunk(f"chunk at offset {pos} overruns the file")
        if chunk_id == b"MTrk":
            events = list(_parse_track(data, body_start, body_end))
            track_last = events[-1][0] if events else 0
            end_tick = max(end_tick, track_last)
            notes.extend(_collect_notes(events, division, track_last))
            tracks_seen += 1
        pos = body_end

    end_beats = max(
        [Fraction(end_tick, division)] + [n.end for n in notes], default=Fraction(0)
    )
    num_bars = max(1, math.ceil(end_beats / BEATS_PER_BAR))
    return Score(notes=tuple(notes), ticks_per_beat=division, num_bars=num_bars)


def scan_time_signatures(data: bytes):
    """Return the (numerator, denominator) pairs named by time-signature metas.

    Used by corpus ingestion to reject non-4/4 material before parsing fully.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader(f"bad magic {data[:4]!r}")
    header_len = int.from_bytes(data[4:8], "big")
    signatures = []
    pos = 8 + header_len
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        chunk_len = int.from_bytes(data[pos + 4:pos + 8], "big")
        body_end = min(pos + 8 + chunk_len, len(data))
        if chunk_id == b"MTrk":
            try:
                for _, status, payload in _parse_track(data, pos + 8, body_end):
                    if status == _META and payload[:1] == bytes([_META_TIME_SIGNATURE]):
                        if len(payload) >= 3:
                            signatures.append((payload[1], 2 ** payload[2]))
            except MidiError:
                pass
        pos = body_end
    return signatures


def _write_vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _assign_channels(score: Score, tpb: int) -> list[int]:
    """Per-note channel so that same-pitch overlaps pair up on re-parse.

    Overlapping notes of one pitch are spread over distinct channels
    (FIFO pairing within a channel would otherwise swap their durations).
    Depth beyond 16 falls back to channel 0.
    """
    channels = [0] * len(score.notes)
    active: dict[int, list[tuple[int, int]]] = {}
    for idx, note in enumerate(score.notes):
        on_tick = int(note.onset * tpb)
        open_notes = [(end, ch) for end, ch in active.get(note.pitch, ())
                      if end > on_tick]
        taken = {ch for _, ch in open_notes}
        free = next((ch for ch in range(16) if ch not in taken), 0)
        channels[idx] = free
        open_notes.append((int(note.end * tpb), free))
        active[note.pitch] = open_notes
    return channels


def write_smf(score: Score) -> bytes:
    """Serialize a Score as a single-track format 0 file.

    Note-offs are emitted before note-ons at the same tick so that back to
    back repetitions of a pitch survive a parse round trip, and the end of
    track marker sits exactly at the bar boundary to preserve ``num_bars``.
    """
    tpb = score.ticks_per_beat
    channels = _assign_channels(score, tpb)
    events = []
    for idx, note in enumerate(score.notes):
        on_tick = int(note.onset * tpb)
        off_tick = int(note.end * tpb)
        events.append((on_tick, 1, idx,
                       bytes([_NOTE_ON | channels[idx], note.pitch, note.velocity])))
        events.append((off_tick, 0, idx,
                       bytes([_NOTE_OFF | channels[idx], note.pitch, 0x40])))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    body = bytearray()
    body += _write_vlq(0) + bytes([_META, _META_TIME_SIGNATURE, 4, 4, 2, 24, 8])
    tick = 0
    for event_tick, _, _, payload in events:
        body += _write_vlq(event_tick - tick)
        body += payload
        tick = event_tick
    final_tick = score.num_bars * BEATS_PER_BAR * tpb
    body += _write_vlq(final_tick - tick)
    body += bytes([_META, _META_END_OF_TRACK, 0])

    header = b"MThd" + (6).to_bytes(4, "big")
    header += (0).to_bytes(2, "big") + (1).to_bytes(2, "big") + tpb.to_bytes(2, "big")
    return header + b"MTrk" + len(body).to_bytes(4, "big") + bytes(body)


def _round_to_grid(value: Fraction, resolution: Fraction) -> Fraction:
    """Nearest multiple of ``resolution``, half rounded up."""
    steps = (value / resolution + Fraction(1, 2)).__floor__()
    return steps * resolution


def quantize(score: Score, resolution) -> Score:
    """Snap onsets and durations to multiples of ``resolution`` beats.

    Onsets move to the nearest grid line (half rounds up), durations are
    rounded then clamped to at least one grid step. ``num_bars`` grows when
    a rounded-up note spills past the old end. ``ticks_per_beat`` is raised
    to the smallest multiple that can represent the grid exactly.
    """
    resolution = _as_beats(resolution)
    if resolution <= 0:
        raise MidiError(f"resolution {resolution} is not positive")
    tpb = score.ticks_per_beat
    if (resolution * tpb).denominator != 1:
        tpb *= resolution.denominator // math.gcd(resolution.denominator, tpb)
    notes = []
    for note in score.notes:
        onset = _round_to_grid(note.onset, resolution)
        duration = max(resolution, _round_to_grid(note.duration, resolution))
        notes.append(Note(note.pitch, onset, duration, note.velocity))
    end = max((n.end for n in notes), default=Fraction(0))
    num_bars = max(score.num_bars, math.ceil(end / BEATS_PER_BAR))
    return Score(notes=tuple(notes), ticks_per_beat=tpb, num_bars=num_bars)
