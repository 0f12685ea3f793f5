"""Stage 2: encode a stage-1 onsetroll into per-bar conditions and decode a
MIDI-event token sequence autoregressively.

The score encoder is a 1-D conv stack over time (two stride-2 layers take
128 beats to 32 bars). The decoder is a small pre-LN causal transformer
whose input embedding sums the token embedding, a within-slot offset
embedding, and a projection of expand_by_bar(cond, bar indices): the bar's
condition vector concatenated with learned bar and position-in-bar
embeddings. Four heads predict the next structural token and, for NOTE
targets, pitch, velocity bin, and duration bin; the training loss is the
sum of the four cross entropies. Token positions are identified by
(bar, position-in-bar, slot offset) rather than absolute sequence indices,
so training can crop sequences at bar boundaries.

Desk-scale defaults halve the reference configuration (2 decoder layers,
hidden 128 instead of 4 layers, hidden 256); heads 4 and dropout 0.1 kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import Checkpoint
from .corpus import EmptyCorpus
from .midi_io import Score
from .roll import MAX_BARS, MalformedSequence, MidiEventSequence, POSITIONS_PER_BAR, \
    STRUCT_BAR, STRUCT_BOS, STRUCT_EOS, STRUCT_NOTE, STRUCT_PAD, STRUCT_POS_BASE, \
    STRUCT_VOCAB, Token, TokenKind, WINDOW_BEATS, detokenize, note_token, \
    onsetroll_to_score, pos_token, struct_id, validate_roll, BOS, EOS, BAR
from .sde import ShapeMismatch
from .signals import SignalError

log = logging.getLogger(__name__)

_SLOT_CAP = 16
_PITCHES = 128
_VELS = 32
_DURS = 64


class RefinerError(ValueError):
    """Base class for refiner failures."""


class BarOutOfRange(RefinerError):
    """A token's bar index falls outside the 32-bar condition."""


class MalformedOutput(RefinerError):
    """Decoding could not produce a grammatical sequence."""


@dataclass(frozen=True)
class RefinerConfig:
    decoder_layers: int = 2
    hidden: int = 128
    heads: int = 4
    dropout: float = 0.1
    encoder_layers: int = 6
    bar_embed_dim: int = 16
    pos_embed_dim: int = 8

    def __post_init__(self):
        if min(self.decoder_layers, self.hidden, self.heads,
               self.encoder_layers, self.bar_embed_dim, self.pos_embed_dim) < 1:
            raise ValueError("refiner config values must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout {self.dropout} outside [0,1)")
        if self.hidden % self.heads:
            raise ValueError("hidden must divide evenly into heads")


def _encoder_strides(layers: int) -> list[int]:
    strides = [1] * layers
    strides[layers // 3] = 2
    strides[min(2 * layers // 3, layers - 1)] = 2
    return strides


class _LocalGroupNorm(nn.Module):
    """Group normalization with statistics taken per time step, never across
    time, so the conv stack's receptive field stays local."""

    def __init__(self, groups: int, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, length = x.shape
        flat = x.transpose(1, 2).reshape(b * length, c, 1)
        return self.norm(flat).reshape(b, length, c).transpose(1, 2)


class ScoreEncoder(nn.Module):
    """(B, 128 pitches, 128 beats) onsetroll -> (B, 32, hidden) condition."""

    def __init__(self, config: RefinerConfig):
        super().__init__()
        self.config = config
        h = config.hidden
        strides = _encoder_strides(config.encoder_layers)
        convs = []
        in_ch = _PITCHES
        for stride in strides:
            convs.append(nn.Conv1d(in_ch, h, 3, stride=stride, padding=1))
            in_ch = h
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(_LocalGroupNorm(8 if h % 8 == 0 else 1, h)
                                   for _ in strides)
        self.out = nn.Linear(h, h)

    @property
    def receptive_field_beats(self) -> int:
        """Input span (in beats) that can influence one output bar."""
        field, jump = 1, 1
        for stride in _encoder_strides(self.config.encoder_layers):
            field += 2 * jump
            jump *= stride
        return field

    def forward(self, rolls: torch.Tensor) -> torch.Tensor:
        h = rolls
        for conv, norm in zip(self.convs, self.norms):
            h = torch.nn.functional.silu(norm(conv(h)))
        return self.out(h.transpose(1, 2))


class _DecoderBlock(nn.Module):
    """Pre-LN causal self-attention + feed-forward, with a KV cache hook."""

    def __init__(self, config: RefinerConfig):
        super().__init__()
        h = config.hidden
        self.heads = config.heads
        self.norm1 = nn.LayerNorm(h)
        self.qkv = nn.Linear(h, 3 * h)
        self.proj = nn.Linear(h, h)
        self.norm2 = nn.LayerNorm(h)
        self.ff = nn.Sequential(
            nn.Linear(h, 4 * h), nn.GELU(), nn.Linear(4 * h, h)
        )
        self.drop = nn.Dropout(config.dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, L, h = x.shape
        return x.view(b, L, self.heads, h // self.heads).transpose(1, 2)

    def forward(self, x: torch.Tensor, cache: dict | None = None) -> torch.Tensor:
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        q, k, v = self._split(q), self._split(k), self._split(v)
        causal = cache is None
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        att = torch.nn.functional.scaled_dot_product_attention(
            q, k, v, is_causal=causal)
        b, _, L, _ = att.shape
        att = att.transpose(1, 2).reshape(b, L, -1)
        x = x + self.drop(self.proj(att))
        return x + self.drop(self.ff(self.norm2(x)))


@dataclass(frozen=True)
class TokenFrames:
    """Integer views of a token sequence, aligned per position."""

    struct: np.ndarray
    pitch: np.ndarray
    velocity: np.ndarray
    duration: np.ndarray
    bar: np.ndarray
    pos_in_bar: np.ndarray
    slot: np.ndarray


def token_frames(tokens) -> TokenFrames:
    """Index arrays for a token tuple; bars count BAR tokens, POS sets the
    in-bar position, and slot numbers consecutive NOTEs within one slot."""
    length = len(tokens)
    struct = np.zeros(length, dtype=np.int64)
    pitch = np.zeros(length, dtype=np.int64)
    velocity = np.zeros(length, dtype=np.int64)
    duration = np.zeros(length, dtype=np.int64)
    bar = np.zeros(length, dtype=np.int64)
    pos_in_bar = np.zeros(length, dtype=np.int64)
    slot = np.zeros(length, dtype=np.int64)
    cur_bar, cur_pos, run = 0, 0, 0
    bars_seen = 0
    for i, token in enumerate(tokens):
        struct[i] = struct_id(token)
        if token.kind is TokenKind.BAR:
            cur_bar = bars_seen
            bars_seen += 1
            cur_pos, run = 0, 0
        elif token.kind is TokenKind.POS:
            cur_pos, run = token.position, 0
        elif token.kind is TokenKind.NOTE:
            pitch[i] = token.pitch
            velocity[i] = token.velocity_bin
            duration[i] = token.duration_bin
            slot[i] = min(run, _SLOT_CAP - 1)
            run += 1
        else:
            run = 0
        bar[i] = cur_bar
        pos_in_bar[i] = cur_pos
    return TokenFrames(struct, pitch, velocity, duration, bar, pos_in_bar, slot)


class Refiner(nn.Module):
    def __init__(self, config: RefinerConfig | None = None):
        super().__init__()
        self.config = config or RefinerConfig()
        cfg = self.config
        h = cfg.hidden
        self.encoder = ScoreEncoder(cfg)
        self.struct_emb = nn.Embedding(STRUCT_VOCAB, h)
        self.pitch_emb = nn.Embedding(_PITCHES, h)
        self.vel_emb = nn.Embedding(_VELS, h)
        self.dur_emb = nn.Embedding(_DURS, h)
        self.slot_emb = nn.Embedding(_SLOT_CAP, h)
        self.bar_emb = nn.Embedding(MAX_BARS, cfg.bar_embed_dim)
        self.pos_emb = nn.Embedding(POSITIONS_PER_BAR, cfg.pos_embed_dim)
        self.cond_proj = nn.Linear(h + cfg.bar_embed_dim + cfg.pos_embed_dim, h)
        self.blocks = nn.ModuleList(_DecoderBlock(cfg)
                                    for _ in range(cfg.decoder_layers))
        self.final_norm = nn.LayerNorm(h)
        self.head_struct = nn.Linear(h, STRUCT_VOCAB)
        self.head_pitch = nn.Linear(h, _PITCHES)
        self.head_vel = nn.Linear(h, _VELS)
        self.head_dur = nn.Linear(h, _DURS)

    def encode_score(self, roll) -> torch.Tensor:
        """One roll (128 x <=128 beats) to a (32, hidden) condition."""
        grid = validate_roll(roll)
        if grid.shape[1] > WINDOW_BEATS:
            raise ShapeMismatch(f"roll has {grid.shape[1]} beats, max {WINDOW_BEATS}")
        if grid.shape[1] < WINDOW_BEATS:
            pad = np.zeros((_PITCHES, WINDOW_BEATS - grid.shape[1]), dtype=np.uint8)
            grid = np.concatenate([grid, pad], axis=1)
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            was_training = self.training
            self.eval()
            try:
                cond = self.encoder(torch.from_numpy(grid[None]).to(dtype))
            finally:
                self.train(was_training)
        return cond[0]

    def expand_by_bar(self, cond: torch.Tensor, bars: torch.Tensor,
                      pos_in_bar: torch.Tensor) -> torch.Tensor:
        """Row i = cond[bars[i]] concat bar embedding concat position embedding."""
        if int(bars.max()) >= cond.shape[-2]:
            raise BarOutOfRange(
                f"bar index {int(bars.max())} outside 0..{cond.shape[-2] - 1}")
        tiled = cond[..., bars, :] if cond.dim() == 2 else \
            torch.gather(cond, 1, bars[..., None].expand(-1, -1, cond.shape[-1]))
        return torch.cat([tiled, self.bar_emb(bars), self.pos_emb(pos_in_bar)],
                         dim=-1)

    def forward(self, frames: dict[str, torch.Tensor], cond: torch.Tensor,
                caches: list[dict] | None = None) -> dict[str, torch.Tensor]:
        """Logits for every position. frames values are (B, L) index tensors;
        cond is (B, 32, hidden)."""
        struct = frames["struct"]
        note_mask = (struct == STRUCT_NOTE).unsqueeze(-1)
        emb = self.struct_emb(struct) + self.slot_emb(frames["slot"])
        notes = (self.pitch_emb(frames["pitch"]) + self.vel_emb(frames["velocity"])
                 + self.dur_emb(frames["duration"]))
        emb = emb + notes * note_mask.to(emb.dtype)
        emb = emb + self.cond_proj(
            self.expand_by_bar(cond, frames["bar"], frames["pos_in_bar"]))
        h = emb
        for i, block in enumerate(self.blocks):
            h = block(h, cache=None if caches is None else caches[i])
        h = self.final_norm(h)
        return {
            "struct": self.head_struct(h),
            "pitch": self.head_pitch(h),
            "velocity": self.head_vel(h),
            "duration": self.head_dur(h),
        }


def expand_by_bar(model: Refiner, cond: torch.Tensor, token_bars,
                  token_pos=None) -> torch.Tensor:
    bars = torch.as_tensor(np.asarray(token_bars), dtype=torch.long)
    pos = torch.zeros_like(bars) if token_pos is None else \
        torch.as_tensor(np.asarray(token_pos), dtype=torch.long)
    return model.expand_by_bar(cond, bars, pos)


def _frames_tensor(frames: TokenFrames, upto: int | None = None) -> dict:
    sl = slice(None, upto)
    return {
        "struct": torch.from_numpy(frames.struct[sl])[None],
        "pitch": torch.from_numpy(frames.pitch[sl])[None],
        "velocity": torch.from_numpy(frames.velocity[sl])[None],
        "duration": torch.from_numpy(frames.duration[sl])[None],
        "bar": torch.from_numpy(frames.bar[sl])[None],
        "pos_in_bar": torch.from_numpy(frames.pos_in_bar[sl])[None],
        "slot": torch.from_numpy(frames.slot[sl])[None],
    }


def loss_terms(model: Refiner, frames_batch: dict[str, torch.Tensor],
               cond: torch.Tensor) -> dict[str, torch.Tensor]:
    """Teacher-forced next-token losses; 'total' is the sum of the four."""
    logits = model(
        {k: v[:, :-1] for k, v in frames_batch.items()}, cond)
    target = {k: v[:, 1:] for k, v in frames_batch.items()}
    live = target["struct"] != STRUCT_PAD
    note = target["struct"] == STRUCT_NOTE
    ce = torch.nn.functional.cross_entropy

    def masked_ce(name: str, mask: torch.Tensor, classes: int) -> torch.Tensor:
        flat = logits[name].reshape(-1, classes)[mask.reshape(-1)]
        tgt = target[name].reshape(-1)[mask.reshape(-1)]
        if tgt.numel() == 0:
            return torch.zeros((), dtype=flat.dtype)
        return ce(flat, tgt)

    terms = {
        "struct": masked_ce("struct", live, STRUCT_VOCAB),
        "pitch": masked_ce("pitch", note, _PITCHES),
        "velocity": masked_ce("velocity", note, _VELS),
        "duration": masked_ce("duration", note, _DURS),
    }
    terms["total"] = terms["struct"] + terms["pitch"] + terms["velocity"] \
        + terms["duration"]
    return terms


def _bar_starts(tokens) -> list[int]:
    return [i for i, t in enumerate(tokens) if t.kind is TokenKind.BAR]


def _crop(tokens, frames: TokenFrames, start_bar: int, num_bars: int):
    starts = _bar_starts(tokens)
    begin = 0 if start_bar == 0 else starts[start_bar]
    end_bar = start_bar + num_bars
    end = starts[end_bar] if end_bar < len(starts) else len(tokens)
    sl = slice(begin, end)
    return TokenFrames(frames.struct[sl], frames.pitch[sl], frames.velocity[sl],
                       frames.duration[sl], frames.bar[sl], frames.pos_in_bar[sl],
                       frames.slot[sl])


def _pad_stack(frame_list: list[TokenFrames]) -> dict[str, torch.Tensor]:
    width = max(f.struct.size for f in frame_list)
    out = {}
    for name in ("struct", "pitch", "velocity", "duration", "bar",
                 "pos_in_bar", "slot"):
        rows = []
        for f in frame_list:
            arr = getattr(f, name)
            rows.append(np.pad(arr, (0, width - arr.size)))
        out[name] = torch.from_numpy(np.stack(rows))
    return out


def _pair_items(pairs) -> list[tuple[np.ndarray, MidiEventSequence]]:
    items = []
    for entry in pairs:
        if hasattr(entry, "roll"):
            items.append((entry.roll, entry.events))
        else:
            roll, events = entry
            items.append((np.asarray(roll), events))
    if not items:
        raise EmptyCorpus("refiner corpus is empty")
    return items


def train_refiner(pairs, config: RefinerConfig | None = None, steps: int = 800,
                  seed: int = 0, batch_size: int = 8, lr: float = 3e-4,
                  crop_bars: int = 8, log_every: int | None = None) -> Checkpoint:
    """Train on (roll, events) pairs with bar-aligned crops; seeded."""
    config = config or RefinerConfig()
    items = _pair_items(pairs)
    torch.manual_seed(seed)
    model = Refiner(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    frames_all = [token_frames(ev.tokens) for _, ev in items]
    rolls = np.stack([roll for roll, _ in items]).astype(np.float32)
    for step in range(steps):
        picks = rng.integers(0, len(items), size=batch_size)
        crops = []
        for i in picks:
            tokens = items[i][1].tokens
            total_bars = sum(1 for t in tokens if t.kind is TokenKind.BAR)
            last = max(0, total_bars - crop_bars)
            # oversample the sequence edges so BOS->BAR and ->EOS get signal
            lot = rng.random()
            if lot < 0.25:
                start = 0
            elif lot < 0.5:
                start = last
            else:
                start = int(rng.integers(0, last + 1))
            crops.append(_crop(tokens, frames_all[i], start, crop_bars))
        batch = _pad_stack(crops)
        cond = model.encoder(torch.from_numpy(rolls[picks]))
        terms = loss_terms(model, batch, cond)
        optimizer.zero_grad()
        terms["total"].backward()
        optimizer.step()
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}/{steps} loss "
                  f"{float(terms['total'].detach()):.4f}", flush=True)
    return to_checkpoint(model)


def teacher_forced_accuracy(model: Refiner, pairs) -> tuple[float, float]:
    """Complete-token next-token accuracy and the majority-class baseline.

    A prediction is correct when the structural argmax matches and, for
    NOTE targets, all three attribute argmaxes match too. The baseline is
    the frequency of the most common complete target token.
    """
    items = _pair_items(pairs)
    model.eval()
    correct = total = 0
    counts: dict[tuple, int] = {}
    with torch.no_grad():
        for roll, events in items:
            frames = token_frames(events.tokens)
            batch = _pad_stack([frames])
            cond = model.encoder(
                torch.from_numpy(roll[None].astype(np.float32)))
            logits = model({k: v[:, :-1] for k, v in batch.items()}, cond)
            target = {k: v[0, 1:].numpy() for k, v in batch.items()}
            pred_struct = logits["struct"][0].argmax(-1).numpy()
            ok = pred_struct == target["struct"]
            note = target["struct"] == STRUCT_NOTE
            for name in ("pitch", "velocity", "duration"):
                ok = ok & (~note | (logits[name][0].argmax(-1).numpy()
                                    == target[name]))
            correct += int(ok.sum())
            total += ok.size
            for i in range(ok.size):
                key = (int(target["struct"][i]),) + (
                    (int(target["pitch"][i]), int(target["velocity"][i]),
                     int(target["duration"][i]))
                    if note[i] else ())
                counts[key] = counts.get(key, 0) + 1
    baseline = max(counts.values()) / total if total else 0.0
    return correct / total if total else 0.0, baseline


def _valid_kinds(bars: int, cur_pos: int | None) -> set[int]:
    """Structural ids legal as the next token."""
    valid: set[int] = set()
    if bars < MAX_BARS:
        valid.add(STRUCT_BAR)
    if bars >= 1:
        valid.add(STRUCT_EOS)
        first = 0 if cur_pos is None else cur_pos + 1
        valid.update(STRUCT_POS_BASE + p for p in range(first, POSITIONS_PER_BAR))
        if cur_pos is not None:
            valid.add(STRUCT_NOTE)
    return valid


def generate_events(model: Refiner, cond: torch.Tensor, max_tokens: int = 900,
                    seed: int = 0, temperature: float = 1.0) -> MidiEventSequence:
    """Decode from BOS; invalid draws retry up to 8 times per step."""
    model.eval()
    rng = np.random.default_rng(seed)
    tokens: list[Token] = [BOS]
    bars = 0
    cur_pos: int | None = None
    run = 0
    caches = [{} for _ in model.blocks]
    cond_b = cond[None] if cond.dim() == 2 else cond
    next_frame = {
        "struct": STRUCT_BOS, "pitch": 0, "velocity": 0, "duration": 0,
        "bar": 0, "pos_in_bar": 0, "slot": 0,
    }

    def sample_from(logits: torch.Tensor) -> int:
        probs = torch.softmax(logits.double() / temperature, dim=-1).numpy()
        probs = probs / probs.sum()
        return int(rng.choice(probs.size, p=probs))

    with torch.no_grad():
        while len(tokens) < max_tokens:
            frame_tensors = {
                k: torch.tensor([[v]], dtype=torch.long)
                for k, v in next_frame.items()
            }
            logits = model(frame_tensors, cond_b, caches=caches)
            valid = _valid_kinds(bars, cur_pos)
            token = None
            for _ in range(8):
                sid = sample_from(logits["struct"][0, -1])
                if sid not in valid:
                    continue
                if sid == STRUCT_EOS:
                    tokens.append(EOS)
                    return MidiEventSequence(tokens=tuple(tokens))
                if sid == STRUCT_BAR:
                    token = BAR
                    bars += 1
                    cur_pos, run = None, 0
                elif sid == STRUCT_NOTE:
                    token = note_token(
                        sample_from(logits["pitch"][0, -1]),
                        sample_from(logits["velocity"][0, -1]),
                        sample_from(logits["duration"][0, -1]),
                    )
                else:
                    cur_pos = sid - STRUCT_POS_BASE
                    token = pos_token(cur_pos)
                    run = 0
                break
            if token is None:
                raise MalformedOutput(
                    f"no valid token after 8 draws at length {len(tokens)}")
            tokens.append(token)
            next_frame = {
                "struct": struct_id(token),
                "pitch": token.pitch or 0,
                "velocity": token.velocity_bin or 0,
                "duration": token.duration_bin or 0,
                "bar": max(0, bars - 1),
                "pos_in_bar": cur_pos or 0,
                "slot": min(run, _SLOT_CAP - 1) if token.kind is TokenKind.NOTE
                else 0,
            }
            if token.kind is TokenKind.NOTE:
                run += 1
    if bars >= 1:
        tokens.append(EOS)
        return MidiEventSequence(tokens=tuple(tokens))
    raise MalformedOutput("hit max_tokens before any complete bar")


def refine(model: Refiner, roll, seed: int = 0, max_tokens: int = 900,
           temperature: float = 1.0) -> Score:
    """Full stage 2: encode, decode, detokenize; falls back to a direct
    roll-to-score conversion if decoding goes wrong."""
    grid = validate_roll(roll)
    cond = model.encode_score(grid)
    try:
        events = generate_events(model, cond, max_tokens=max_tokens, seed=seed,
                                 temperature=temperature)
        return detokenize(events)
    except (MalformedOutput, MalformedSequence) as exc:
        log.warning("refine fell back to direct conversion: %s", exc)
        return onsetroll_to_score(grid)


def to_checkpoint(model: Refiner) -> Checkpoint:
    from .sde import DEFAULT_SCHEDULE

    cfg = model.config
    config = {
        "decoder_layers": cfg.decoder_layers,
        "hidden": cfg.hidden,
        "heads": cfg.heads,
        "dropout": cfg.dropout,
        "encoder_layers": cfg.encoder_layers,
        "bar_embed_dim": cfg.bar_embed_dim,
        "pos_embed_dim": cfg.pos_embed_dim,
    }
    params = {k: v.detach().numpy().copy() for k, v in model.state_dict().items()}
    return Checkpoint(kind="refiner", config=config, schedule=DEFAULT_SCHEDULE,
                      params=params)


def from_checkpoint(ckpt: Checkpoint) -> Refiner:
    if ckpt.kind != "refiner":
        raise ValueError(f"checkpoint kind {ckpt.kind!r} is not 'refiner'")
    model = Refiner(RefinerConfig(**{k: (float(v) if k == "dropout" else int(v))
                                     for k, v in ckpt.config.items()}))
    state = {k: torch.from_numpy(v.copy()) for k, v in ckpt.params.items()}
    model.load_state_dict(state, strict=True)
    return model
