"""Stage-1 trainable model: condition embedding, a small UNet noise
predictor, and the combined conditional/unconditional training loop.

The network predicts the Gaussian noise eps added by the forward process;
the ScoreFunction adapter converts that to a score via
s = -eps / sqrt(1 - alpha_bar(t)). Conditions enter as extra input channels
built from c_n / c_p / c_c in one of three modes: learned per-value tables
(WORD), normalized raw planes (DIRECT), or sinusoidal encodings of the raw
values (POSITIONAL). Null conditions use a reserved table row (WORD) or
zero planes (DIRECT, POSITIONAL).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import Checkpoint
from .corpus import EmptyCorpus
from .roll import NUM_PITCHES
from .sde import BetaSchedule, DEFAULT_SCHEDULE, ShapeMismatch, alpha_bar_path
from .signals import ControlSignals, NO_CHORD, null_signals

C_N_NULL = 128
C_P_NULL = 128
C_C_NULL = NO_CHORD + 1
_VALUE_CAP = 127


class EmbedMode(str, enum.Enum):
    WORD = "word"
    DIRECT = "direct"
    POSITIONAL = "positional"


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    depth: int = 3
    cond_embed_dim: int = 32
    embed_mode: EmbedMode = EmbedMode.WORD
    p_uncond: float = 0.5

    def __post_init__(self):
        if min(self.base_channels, self.depth, self.cond_embed_dim) < 1:
            raise ValueError("base_channels, depth, cond_embed_dim must be >= 1")
        if not 0 <= self.p_uncond <= 1:
            raise ValueError(f"p_uncond {self.p_uncond} outside [0,1]")

    @property
    def cond_channels(self) -> int:
        if self.embed_mode is EmbedMode.DIRECT:
            return 3
        return 3 * self.cond_embed_dim


def _signal_indices(signals: ControlSignals, grid_shape) -> tuple[np.ndarray, ...]:
    """Integer index vectors (c_n, c_p, c_c) with null mapped to reserved ids."""
    m, n = grid_shape
    if signals.is_null:
        return (np.full(n, C_N_NULL), np.full(m, C_P_NULL), np.full(n, C_C_NULL))
    if signals.num_beats != n:
        raise ShapeMismatch(f"signals cover {signals.num_beats} beats, grid has {n}")
    if m != NUM_PITCHES:
        raise ShapeMismatch(f"grid has {m} rows, expected {NUM_PITCHES}")
    return (
        signals.c_n.copy(),
        np.minimum(signals.c_p, _VALUE_CAP),
        signals.c_c.copy(),
    )


def _sinusoid(values: torch.Tensor, dim: int) -> torch.Tensor:
    """Transformer-style encoding of integer values; shape (*values, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=values.dtype) / max(half - 1, 1)
    )
    angles = values[..., None] * freqs
    enc = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if dim % 2:
        enc = torch.cat([enc, torch.zeros_like(enc[..., :1])], dim=-1)
    return enc


class ConditionEmbedder(nn.Module):
    """Turn batched signal index vectors into a (B, C, m, n) tensor."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        self.register_buffer("dtype_probe", torch.zeros(0), persistent=False)
        if config.embed_mode is EmbedMode.WORD:
            dim = config.cond_embed_dim
            self.table_n = nn.Embedding(C_N_NULL + 1, dim)
            self.table_p = nn.Embedding(C_P_NULL + 1, dim)
            self.table_c = nn.Embedding(C_C_NULL + 1, dim)

    def forward(self, idx_n: torch.Tensor, idx_p: torch.Tensor,
                idx_c: torch.Tensor, null_mask: torch.Tensor) -> torch.Tensor:
        mode = self.config.embed_mode
        b, n = idx_n.shape
        m = idx_p.shape[1]
        if mode is EmbedMode.WORD:
            idx_n = torch.where(null_mask[:, None], torch.full_like(idx_n, C_N_NULL), idx_n)
            idx_p = torch.where(null_mask[:, None], torch.full_like(idx_p, C_P_NULL), idx_p)
            idx_c = torch.where(null_mask[:, None], torch.full_like(idx_c, C_C_NULL), idx_c)
            emb_n = self.table_n(idx_n).permute(0, 2, 1)[:, :, None, :]
            emb_p = self.table_p(idx_p).permute(0, 2, 1)[:, :, :, None]
            emb_c = self.table_c(idx_c).permute(0, 2, 1)[:, :, None, :]
            parts = (emb_n.expand(-1, -1, m, n), emb_p.expand(-1, -1, m, n),
                     emb_c.expand(-1, -1, m, n))
            return torch.cat(parts, dim=1)

        dtype = self.dtype_probe.dtype
        live = (~null_mask).to(dtype)[:, None]
        if mode is EmbedMode.DIRECT:
            plane_n = (idx_n.to(dtype) / _VALUE_CAP) * live
            plane_p = (idx_p.to(dtype).clamp(max=_VALUE_CAP) / _VALUE_CAP) * live
            plane_c = (idx_c.to(dtype) / NO_CHORD) * live
            parts = (plane_n[:, None, None, :].expand(-1, 1, m, n),
                     plane_p[:, None, :, None].expand(-1, 1, m, n),
                     plane_c[:, None, None, :].expand(-1, 1, m, n))
            return torch.cat(parts, dim=1)
        dim = self.config.cond_embed_dim
        enc_n = _sinusoid(idx_n.to(dtype), dim) * live[..., None]
        enc_p = _sinusoid(idx_p.to(dtype), dim) * live[..., None]
        enc_c = _sinusoid(idx_c.to(dtype), dim) * live[..., None]
        parts = (enc_n.permute(0, 2, 1)[:, :, None, :].expand(-1, -1, m, n),
                 enc_p.permute(0, 2, 1)[:, :, :, None].expand(-1, -1, m, n),
                 enc_c.permute(0, 2, 1)[:, :, None, :].expand(-1, -1, m, n))
        return torch.cat(parts, dim=1)


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class _ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.temb_proj(temb)[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class _UNet(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        base = config.base_channels
        depth = config.depth
        chans = [base * min(2 ** i, 4) for i in range(depth)]
        temb_dim = base * 4
        self.temb_dim = temb_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(base, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim)
        )
        self.stem = nn.Conv2d(1 + config.cond_channels, base, 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = base
        for i, ch in enumerate(chans):
            self.down_blocks.append(_ResBlock(prev, ch, temb_dim))
            prev = ch
            if i < depth - 1:
                self.downs.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.mid = _ResBlock(chans[-1], chans[-1], temb_dim)
        self.ups = nn.ModuleList(
            nn.Conv2d(chans[i + 1], chans[i], 3, padding=1) for i in range(depth - 1)
        )
        self.up_blocks = nn.ModuleList(
            _ResBlock(2 * chans[i], chans[i], temb_dim) for i in range(depth)
        )
        self.head_norm = nn.GroupNorm(_groups(base), base)
        self.head = nn.Conv2d(base, 1, 1)
        self.base = base

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(_sinusoid(t * 1000.0, self.base))
        h = self.stem(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, temb)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        h = self.mid(h, temb)
        for i in reversed(range(len(self.up_blocks))):
            if i < len(self.ups):
                h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = self.ups[i](h)
            h = self.up_blocks[i](torch.cat([h, skips[i]], dim=1), temb)
        return self.head(torch.nn.functional.silu(self.head_norm(h)))


class Denoiser(nn.Module):
    """Noise-prediction network plus its condition embedder."""

    def __init__(self, config: DenoiserConfig | None = None,
                 schedule: BetaSchedule = DEFAULT_SCHEDULE):
        super().__init__()
        self.config = config or DenoiserConfig()
        self.schedule = schedule
        self.embedder = ConditionEmbedder(self.config)
        self.unet = _UNet(self.config)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor,
                cond: torch.Tensor) -> torch.Tensor:
        if x_t.shape[0] != cond.shape[0] or x_t.shape[2:] != cond.shape[2:]:
            raise ShapeMismatch(f"x_t {tuple(x_t.shape)} vs cond {tuple(cond.shape)}")
        return self.unet(torch.cat([x_t, cond], dim=1), t)

    def embed_conditions(self, signals: ControlSignals, grid_shape) -> torch.Tensor:
        """Condition tensor of shape (cond_channels, m, n) for one grid."""
        idx_n, idx_p, idx_c = _signal_indices(signals, grid_shape)
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            out = self.embedder(
                torch.from_numpy(np.asarray(idx_n))[None],
                torch.from_numpy(np.asarray(idx_p))[None],
                torch.from_numpy(np.asarray(idx_c))[None],
                torch.tensor([signals.is_null]),
            )
        return out[0].to(dtype)

    def predict_noise(self, x_t, t: float, cond_tensor: torch.Tensor) -> np.ndarray:
        """Single-grid eps estimate; accepts and returns numpy arrays."""
        dtype = next(self.parameters()).dtype
        x = torch.as_tensor(np.asarray(x_t), dtype=dtype)
        if x.ndim != 2:
            raise ShapeMismatch(f"x_t must be 2-D, got shape {tuple(x.shape)}")
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                eps = self(
                    x[None, None],
                    torch.tensor([t], dtype=dtype),
                    cond_tensor[None].to(dtype),
                )
        finally:
            self.train(was_training)
        return eps[0, 0].numpy().astype(np.float64)


def embed_conditions(model: Denoiser, signals: ControlSignals, grid_shape):
    return model.embed_conditions(signals, grid_shape)


class EpsScoreFunction:
    """ScoreFunction adapter: s = -eps / sqrt(1 - alpha_bar(round(t N))).

    guidance > 1 sharpens conditioning by mixing the conditional and null
    noise estimates, eps = eps_null + guidance * (eps_cond - eps_null).
    The mix needs the null-dropout training pass and costs a second model
    evaluation per step; 1.0 is the plain conditional estimate, and null
    conditions are never mixed.
    """

    def __init__(self, model: Denoiser, guidance: float = 1.0):
        self.model = model
        self.guidance = float(guidance)
        self.schedule = model.schedule
        self._path = alpha_bar_path(model.schedule, 1.0)
        self._null = null_signals()
        self._cond_cache: dict = {}

    def _cond_tensor(self, cond: ControlSignals, grid_shape) -> torch.Tensor:
        key = (id(cond), tuple(grid_shape))
        cached = self._cond_cache.get(key)
        if cached is None or cached[0] is not cond:
            cached = (cond, self.model.embed_conditions(cond, grid_shape))
            self._cond_cache[key] = cached
        return cached[1]

    def evaluate(self, x: np.ndarray, t: float, cond: ControlSignals) -> np.ndarray:
        n = self.schedule.num_steps
        n_eff = min(n, max(1, round(t * n)))
        ab = self._path[n_eff]
        eps = self.model.predict_noise(x, t, self._cond_tensor(cond, x.shape))
        if self.guidance != 1.0 and not cond.is_null:
            base = self.model.predict_noise(x, t, self._cond_tensor(self._null, x.shape))
            eps = base + self.guidance * (eps - base)
        return -eps / math.sqrt(1.0 - ab)


def as_score_function(source: Checkpoint | Denoiser,
                      guidance: float = 1.0) -> EpsScoreFunction:
    model = source if isinstance(source, Denoiser) else from_checkpoint(source)
    return EpsScoreFunction(model, guidance=guidance)


def to_checkpoint(model: Denoiser) -> Checkpoint:
    config = {
        "base_channels": model.config.base_channels,
        "depth": model.config.depth,
        "cond_embed_dim": model.config.cond_embed_dim,
        "embed_mode": model.config.embed_mode.value,
        "p_uncond": model.config.p_uncond,
    }
    params = {k: v.detach().numpy().copy() for k, v in model.state_dict().items()}
    return Checkpoint(kind="denoiser", config=config, schedule=model.schedule,
                      params=params)


def from_checkpoint(ckpt: Checkpoint) -> Denoiser:
    if ckpt.kind != "denoiser":
        raise ValueError(f"checkpoint kind {ckpt.kind!r} is not 'denoiser'")
    config = DenoiserConfig(
        base_channels=int(ckpt.config["base_channels"]),
        depth=int(ckpt.config["depth"]),
        cond_embed_dim=int(ckpt.config["cond_embed_dim"]),
        embed_mode=EmbedMode(ckpt.config["embed_mode"]),
        p_uncond=float(ckpt.config["p_uncond"]),
    )
    model = Denoiser(config, ckpt.schedule)
    state = {k: torch.from_numpy(v.copy()) for k, v in ckpt.params.items()}
    model.load_state_dict(state, strict=True)
    return model


def _corpus_items(corpus) -> list[tuple[np.ndarray, ControlSignals]]:
    items = []
    for entry in corpus:
        if hasattr(entry, "roll"):
            items.append((entry.roll, entry.signals))
        else:
            roll, signals = entry
            items.append((np.asarray(roll), signals))
    if not items:
        raise EmptyCorpus("training corpus is empty")
    return items


def _crop_item(roll: np.ndarray, signals: ControlSignals, width: int,
               rng: np.random.Generator) -> tuple[np.ndarray, ControlSignals]:
    """Random width-beat window. Per-beat signals are sliced to the window;
    the pitch profile stays whole so its value range matches full grids."""
    n = roll.shape[1]
    if n <= width:
        return roll, signals
    start = int(rng.integers(0, n - width + 1))
    window = roll[:, start:start + width]
    if signals.is_null:
        return window, signals
    return window, ControlSignals(
        c_n=signals.c_n[start:start + width],
        c_p=signals.c_p,
        c_c=signals.c_c[start:start + width],
    )


def train_step(model: Denoiser, optimizer: torch.optim.Optimizer,
               batch: list[tuple[np.ndarray, ControlSignals]],
               rng: np.random.Generator,
               schedule: BetaSchedule = DEFAULT_SCHEDULE) -> float:
    """One optimization step on a prepared batch; returns the loss value."""
    config = model.config
    n_sched = schedule.num_steps
    path = alpha_bar_path(schedule, 1.0)
    m, n = batch[0][0].shape
    dtype = next(model.parameters()).dtype
    np_dtype = np.float64 if dtype is torch.float64 else np.float32

    x0 = np.stack([roll.astype(np_dtype) * 2.0 - 1.0 for roll, _ in batch])
    steps = rng.integers(1, n_sched + 1, size=len(batch))
    z = rng.standard_normal((len(batch), m, n)).astype(np_dtype)
    ab = path[steps].astype(np_dtype)[:, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z

    coin = rng.random(len(batch)) < config.p_uncond
    null_mask = coin | np.array([sig.is_null for _, sig in batch])
    idx = [_signal_indices(sig, (m, n)) for _, sig in batch]
    idx_n = torch.from_numpy(np.stack([a for a, _, _ in idx]))
    idx_p = torch.from_numpy(np.stack([b for _, b, _ in idx]))
    idx_c = torch.from_numpy(np.stack([c for _, _, c in idx]))
    cond = model.embedder(idx_n, idx_p, idx_c, torch.from_numpy(null_mask))

    t = torch.from_numpy((steps / n_sched).astype(np_dtype))
    eps = model(torch.from_numpy(x_t)[:, None], t, cond)
    loss = torch.nn.functional.mse_loss(eps, torch.from_numpy(z)[:, None])
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train(corpus, config: DenoiserConfig | None = None, steps: int = 2000,
          seed: int = 0, batch_size: int = 8, lr: float = 1e-4,
          schedule: BetaSchedule = DEFAULT_SCHEDULE,
          log_every: int | None = None, crop_beats: int | None = None,
          lr_final: float | None = None) -> Checkpoint:
    """Train a denoiser from scratch; deterministic given seed and thread count.

    crop_beats trains on random windows of that width (cheaper steps, same
    full-width sampling); lr_final decays the learning rate linearly.
    """
    config = config or DenoiserConfig()
    items = _corpus_items(corpus)
    if crop_beats is not None and crop_beats < 1:
        raise ValueError(f"crop_beats {crop_beats} must be >= 1")
    torch.manual_seed(seed)
    model = Denoiser(config, schedule)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for step in range(steps):
        if lr_final is not None:
            frac = step / max(1, steps - 1)
            for group in optimizer.param_groups:
                group["lr"] = lr + (lr_final - lr) * frac
        picks = rng.integers(0, len(items), size=batch_size)
        batch = [items[i] for i in picks]
        if crop_beats is not None:
            batch = [_crop_item(roll, sig, crop_beats, rng) for roll, sig in batch]
        loss = train_step(model, optimizer, batch, rng, schedule)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}/{steps} loss {loss:.4f}", flush=True)
    return to_checkpoint(model)
