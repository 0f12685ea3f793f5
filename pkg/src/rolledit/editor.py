"""The fine-grained editing tasks as thin wrappers over sde.masked_edit.

Each task builds (x, mask, t0, K) from an EditRequest, runs the masked
reverse chain, binarizes, and re-stamps preserved cells from the input so
"keep the other parts unchanged" holds bit-exactly. Task settings:

    stroke-generate  mask all ones          t0 0.4  K 2
    stroke-edit      mask 1 inside regions  t0 0.4  K 2
    inpaint          mask 1 inside regions  t0 1    K 1
    outpaint         mask 1 on appended     t0 1    K 1
    combine          mask 1 on gap columns  t0 1    K 1
    style-transfer   mask all ones          t0 0.4  K 2
    generate         mask all ones          t0 1    K 1

The request seed spawns two child streams: stream 0 fills prior-noise
columns (outpaint/combine), stream 1 drives masked_edit. Identical
requests therefore reproduce identical outputs.

EditRequest JSON (used by the CLI and the HTTP service):

    {
      "task": "stroke-generate" | "stroke-edit" | "inpaint" | "outpaint"
              | "combine" | "style-transfer" | "generate",
      "input": {"m":128,"n":...,"cells":[[pitch,beat],...]},   # single-input tasks
      "inputs": [roll, roll, ...],                             # combine only
      "regions": [[p0,p1,b0,b1], ...],                         # half-open rectangles
      "signals": {"c_n":[...],"c_p":[...],"c_c":[...]} | {"null":true},
      "t0": 0.4,            # optional override
      "k": 2,               # optional override
      "seed": 0,
      "extra_bars": 8,      # outpaint
      "gap_bars": 4,        # combine
      "out_bars": 32        # generate
    }
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .roll import NUM_PITCHES, TooLong, roll_from_obj, roll_to_obj, validate_roll
from .sde import BetaSchedule, DEFAULT_SCHEDULE, ScoreFunction, ShapeMismatch, \
    binarize, masked_edit, signed_from_roll
from .signals import ControlSignals, LengthMismatch, NullSignals, null_signals, \
    signals_from_json, signals_to_json

MAX_BEATS = 128
DEFAULT_GAP_BARS = 4
DEFAULT_OUT_BARS = 32


class EditError(ValueError):
    """Base class for edit-request failures."""


class MissingRegion(EditError):
    """The task needs at least one region rectangle."""


class MissingInput(EditError):
    """The task needs an input roll (or two, for combine)."""


class RequestSchemaError(EditError):
    """The request JSON does not match the documented schema."""


class EditTask(str, enum.Enum):
    STROKE_GENERATE = "stroke-generate"
    STROKE_EDIT = "stroke-edit"
    INPAINT = "inpaint"
    OUTPAINT = "outpaint"
    COMBINE = "combine"
    STYLE_TRANSFER = "style-transfer"
    GENERATE = "generate"


TASK_T0 = {
    EditTask.STROKE_GENERATE: 0.4,
    EditTask.STROKE_EDIT: 0.4,
    EditTask.INPAINT: 1.0,
    EditTask.OUTPAINT: 1.0,
    EditTask.COMBINE: 1.0,
    EditTask.STYLE_TRANSFER: 0.4,
    EditTask.GENERATE: 1.0,
}

TASK_K = {task: (2 if t0 == 0.4 else 1) for task, t0 in TASK_T0.items()}


@dataclass(frozen=True)
class Region:
    """Half-open rectangle [p0,p1) x [b0,b1) in (pitch, beat) coordinates."""

    p0: int
    p1: int
    b0: int
    b1: int

    def __post_init__(self):
        if not (0 <= self.p0 < self.p1 <= NUM_PITCHES):
            raise EditError(f"pitch range {self.p0}:{self.p1} invalid")
        if not 0 <= self.b0 < self.b1:
            raise EditError(f"beat range {self.b0}:{self.b1} invalid")


@dataclass(frozen=True)
class EditRequest:
    task: EditTask
    input: np.ndarray | None = None
    inputs: tuple[np.ndarray, ...] = ()
    regions: tuple[Region, ...] = ()
    signals: ControlSignals = field(default_factory=null_signals)
    t0_override: float | None = None
    k_override: int | None = None
    seed: int = 0
    extra_bars: int | None = None
    gap_bars: int = DEFAULT_GAP_BARS
    out_bars: int = DEFAULT_OUT_BARS


@dataclass(frozen=True)
class EditPlan:
    """Everything masked_edit needs, plus the re-stamp template."""

    x: np.ndarray
    mask: np.ndarray
    t0: float
    k: int
    signals: ControlSignals
    edit_seed: np.random.SeedSequence
    stamp: np.ndarray


def _checked_input(req: EditRequest) -> np.ndarray:
    if req.input is None:
        raise MissingInput(f"{req.task.value} needs an input roll")
    grid = validate_roll(req.input)
    _check_width(grid.shape[1])
    return grid


def _check_width(beats: int):
    if beats % 4 != 0:
        raise ShapeMismatch(f"grid width {beats} is not a whole number of bars")
    if beats > MAX_BEATS:
        raise TooLong(f"{beats} beats exceeds the {MAX_BEATS}-beat window")


def _region_mask(shape, regions) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.uint8)
    for region in regions:
        if region.b1 > shape[1]:
            raise EditError(f"region beats {region.b0}:{region.b1} exceed "
                            f"grid width {shape[1]}")
        mask[region.p0:region.p1, region.b0:region.b1] = 1
    return mask


def plan_edit(req: EditRequest) -> EditPlan:
    """Construct (x, mask, t0, K) for the request; pure given the seed."""
    root = np.random.SeedSequence(req.seed)
    fill_seed, edit_seed = root.spawn(2)
    fill_rng = np.random.default_rng(fill_seed)
    task = req.task

    if task is EditTask.GENERATE:
        n = req.out_bars * 4
        _check_width(n)
        x = np.zeros((NUM_PITCHES, n), dtype=np.float64)
        mask = np.ones_like(x, dtype=np.uint8)
        stamp = np.zeros_like(mask)
    elif task in (EditTask.STROKE_GENERATE, EditTask.STYLE_TRANSFER):
        stamp = _checked_input(req)
        if task is EditTask.STYLE_TRANSFER and req.signals.is_null:
            raise NullSignals("style transfer needs target signals")
        x = signed_from_roll(stamp)
        mask = np.ones_like(stamp, dtype=np.uint8)
    elif task in (EditTask.STROKE_EDIT, EditTask.INPAINT):
        stamp = _checked_input(req)
        if not req.regions:
            raise MissingRegion(f"{task.value} needs at least one region")
        x = signed_from_roll(stamp)
        mask = _region_mask(stamp.shape, req.regions)
    elif task is EditTask.OUTPAINT:
        base = _checked_input(req)
        if req.extra_bars is None or req.extra_bars < 1:
            raise EditError("outpaint needs extra_bars >= 1")
        extra = req.extra_bars * 4
        _check_width(base.shape[1] + extra)
        stamp = np.concatenate(
            [base, np.zeros((NUM_PITCHES, extra), dtype=np.uint8)], axis=1)
        x = np.concatenate(
            [signed_from_roll(base),
             fill_rng.standard_normal((NUM_PITCHES, extra))], axis=1)
        mask = np.zeros_like(stamp, dtype=np.uint8)
        mask[:, base.shape[1]:] = 1
    elif task is EditTask.COMBINE:
        if len(req.inputs) < 2:
            raise MissingInput("combine needs at least two input rolls")
        parts = [validate_roll(g) for g in req.inputs]
        gap = req.gap_bars * 4
        if req.gap_bars < 1:
            raise EditError("combine needs gap_bars >= 1")
        total = sum(p.shape[1] for p in parts) + gap * (len(parts) - 1)
        _check_width(total)
        stamp = np.zeros((NUM_PITCHES, total), dtype=np.uint8)
        x = np.empty((NUM_PITCHES, total), dtype=np.float64)
        mask = np.zeros_like(stamp, dtype=np.uint8)
        cursor = 0
        for i, part in enumerate(parts):
            width = part.shape[1]
            stamp[:, cursor:cursor + width] = part
            x[:, cursor:cursor + width] = signed_from_roll(part)
            cursor += width
            if i < len(parts) - 1:
                x[:, cursor:cursor + gap] = fill_rng.standard_normal(
                    (NUM_PITCHES, gap))
                mask[:, cursor:cursor + gap] = 1
                cursor += gap
    else:
        raise EditError(f"unknown task {task!r}")

    if not req.signals.is_null and req.signals.num_beats != x.shape[1]:
        raise LengthMismatch(
            f"signals cover {req.signals.num_beats} beats, grid has {x.shape[1]}")

    t0 = req.t0_override if req.t0_override is not None else TASK_T0[task]
    k = req.k_override if req.k_override is not None else TASK_K[task]
    return EditPlan(x=x, mask=mask, t0=t0, k=k, signals=req.signals,
                    edit_seed=edit_seed, stamp=stamp)


def run_edit(req: EditRequest, score_fn: ScoreFunction,
             sched: BetaSchedule = DEFAULT_SCHEDULE) -> tuple[np.ndarray, dict]:
    """Execute the request; returns (onsetroll, run log)."""
    plan = plan_edit(req)
    raw = masked_edit(plan.x, plan.mask, plan.t0, plan.k, score_fn,
                      plan.signals, plan.edit_seed, sched)
    out = binarize(raw)
    preserved = plan.mask == 0
    out[preserved] = plan.stamp[preserved]
    log = {
        "task": req.task.value,
        "t0": plan.t0,
        "k": plan.k,
        "seed": req.seed,
        "shape": list(out.shape),
        "mask_ones": int(plan.mask.sum()),
        "signals_null": plan.signals.is_null,
    }
    return out, log


def _task_runner(task: EditTask):
    def runner(req: EditRequest, score_fn: ScoreFunction,
               sched: BetaSchedule = DEFAULT_SCHEDULE) -> np.ndarray:
        if req.task is not task:
            raise EditError(f"request task {req.task.value} != {task.value}")
        return run_edit(req, score_fn, sched)[0]

    runner.__name__ = task.name.lower()
    return runner


stroke_generate = _task_runner(EditTask.STROKE_GENERATE)
stroke_edit = _task_runner(EditTask.STROKE_EDIT)
inpaint = _task_runner(EditTask.INPAINT)
outpaint = _task_runner(EditTask.OUTPAINT)
combine = _task_runner(EditTask.COMBINE)
style_transfer = _task_runner(EditTask.STYLE_TRANSFER)
generate = _task_runner(EditTask.GENERATE)


_SCHEMA_FIELDS = {"task", "input", "inputs", "regions", "signals", "t0", "k",
                  "seed", "extra_bars", "gap_bars", "out_bars"}


def request_from_obj(payload) -> EditRequest:
    """Parse the documented JSON form; schema errors raise RequestSchemaError."""
    if not isinstance(payload, dict):
        raise RequestSchemaError("request must be a JSON object")
    unknown = set(payload) - _SCHEMA_FIELDS
    if unknown:
        raise RequestSchemaError(f"unknown fields: {sorted(unknown)}")
    try:
        task = EditTask(payload["task"])
    except KeyError:
        raise RequestSchemaError("missing field: task") from None
    except ValueError:
        raise RequestSchemaError(f"task: unknown task {payload['task']!r}") from None

    def wrap(field_name, fn, value):
        try:
            return fn(value)
        except (ValueError, TypeError, KeyError) as exc:
            raise RequestSchemaError(f"{field_name}: {exc}") from exc

    grid = None
    if payload.get("input") is not None:
        grid = wrap("input", roll_from_obj, payload["input"])
    inputs = ()
    if payload.get("inputs") is not None:
        if not isinstance(payload["inputs"], list):
            raise RequestSchemaError("inputs: must be a list of rolls")
        inputs = tuple(
            wrap(f"inputs[{i}]", roll_from_obj, item)
            for i, item in enumerate(payload["inputs"])
        )
    regions = ()
    if payload.get("regions") is not None:
        if not isinstance(payload["regions"], list):
            raise RequestSchemaError("regions: must be a list")
        parsed = []
        for i, item in enumerate(payload["regions"]):
            if not (isinstance(item, list) and len(item) == 4
                    and all(isinstance(v, int) for v in item)):
                raise RequestSchemaError(f"regions[{i}]: need [p0,p1,b0,b1] integers")
            parsed.append(wrap(f"regions[{i}]", lambda v: Region(*v), item))
        regions = tuple(parsed)
    signals = null_signals()
    if payload.get("signals") is not None:
        signals = wrap("signals", signals_from_json, json.dumps(payload["signals"]))

    def integer(name, default=None, minimum=None):
        value = payload.get(name, default)
        if value is None:
            return None
        if not isinstance(value, int) or isinstance(value, bool):
            raise RequestSchemaError(f"{name}: must be an integer")
        if minimum is not None and value < minimum:
            raise RequestSchemaError(f"{name}: must be >= {minimum}")
        return value

    t0 = payload.get("t0")
    if t0 is not None:
        if not isinstance(t0, (int, float)) or isinstance(t0, bool):
            raise RequestSchemaError("t0: must be a number")
        if not 0 < t0 <= 1:
            raise RequestSchemaError("t0: must lie in (0, 1]")
        t0 = float(t0)

    return EditRequest(
        task=task,
        input=grid,
        inputs=inputs,
        regions=regions,
        signals=signals,
        t0_override=t0,
        k_override=integer("k", minimum=1),
        seed=integer("seed", default=0, minimum=0),
        extra_bars=integer("extra_bars"),
        gap_bars=integer("gap_bars", default=DEFAULT_GAP_BARS, minimum=1),
        out_bars=integer("out_bars", default=DEFAULT_OUT_BARS, minimum=1),
    )


def request_from_json(text: str) -> EditRequest:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RequestSchemaError(f"invalid JSON: {exc}") from exc
    return request_from_obj(payload)


def request_to_obj(req: EditRequest) -> dict:
    payload: dict = {"task": req.task.value, "seed": req.seed}
    if req.input is not None:
        payload["input"] = roll_to_obj(req.input)
    if req.inputs:
        payload["inputs"] = [roll_to_obj(g) for g in req.inputs]
    if req.regions:
        payload["regions"] = [[r.p0, r.p1, r.b0, r.b1] for r in req.regions]
    payload["signals"] = json.loads(signals_to_json(req.signals))
    if req.t0_override is not None:
        payload["t0"] = req.t0_override
    if req.k_override is not None:
        payload["k"] = req.k_override
    if req.extra_bars is not None:
        payload["extra_bars"] = req.extra_bars
    if req.gap_bars != DEFAULT_GAP_BARS:
        payload["gap_bars"] = req.gap_bars
    if req.out_bars != DEFAULT_OUT_BARS:
        payload["out_bars"] = req.out_bars
    return payload
