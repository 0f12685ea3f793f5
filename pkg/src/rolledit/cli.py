"""Command line front end.

Subcommands: preprocess, make-toy, train-stage1, train-stage2, generate,
edit <task>, refine, eval, serve. Every run writes a JSON run-log capturing
the seed and settings so outputs can be reproduced exactly. A JSON config
file may supply any flag's value; explicit flags win. The SDMUSE_CACHE
environment variable overrides the default segment-cache directory.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .corpus import ingest, load_segments, make_toy_corpus, save_segments
from .editor import (
    DEFAULT_GAP_BARS,
    DEFAULT_OUT_BARS,
    EditError,
    EditRequest,
    EditTask,
    Region,
    request_to_obj,
    run_edit,
)
from .metrics import MetricReport, csd, dd_similarity, overlap_ratio, pd_similarity
from .midi_io import parse_smf, quantize, write_smf
from .roll import (
    onsetroll_to_score,
    roll_from_bytes,
    roll_from_json,
    roll_to_bytes,
    roll_to_json,
    score_to_onsetroll,
)
from .signals import extract_signals, null_signals, signals_from_json

_ROLL_MAGIC = b"SDMR"


class UsageError(Exception):
    """Bad invocation; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _default_cache() -> str:
    return os.environ.get("SDMUSE_CACHE", "cache")


def _region_flag(text: str) -> Region:
    parts = text.split(":")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("region must be p0:p1:b0:b1")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"region {text!r} is not integers") from None
    try:
        return Region(*values)
    except EditError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed_flag(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed {text!r} is not an integer") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit int")
    return value


def read_roll(path) -> np.ndarray:
    """Load an onsetroll from .roll (binary), .json (cell list), or .mid."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == _ROLL_MAGIC:
        return roll_from_bytes(data)
    if path.suffix.lower() in (".mid", ".midi"):
        return score_to_onsetroll(quantize(parse_smf(data), 1))
    return roll_from_json(data.decode("utf-8"))


def write_roll(path, grid: np.ndarray) -> None:
    """Write .json, .mid (direct conversion, no stage 2), or binary .roll."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        path.write_text(roll_to_json(grid) + "\n")
    elif suffix in (".mid", ".midi"):
        path.write_bytes(write_smf(onsetroll_to_score(grid)))
    else:
        path.write_bytes(roll_to_bytes(grid))


def _read_score(path):
    path = Path(path)
    if path.suffix.lower() in (".mid", ".midi"):
        return parse_smf(path.read_bytes())
    return onsetroll_to_score(read_roll(path))


def _read_signals(path):
    return signals_from_json(Path(path).read_text())


def _write_runlog(args, payload: dict) -> None:
    out = getattr(args, "out", None)
    default = f"{out}.runlog.json" if out else f"{args.command}-runlog.json"
    path = Path(getattr(args, "log", None) or default)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _load_score_fn(path):
    from .denoiser import as_score_function

    return as_score_function(ckpt_io.load(_require(path, "--checkpoint")))


def _run_edit_command(args, task: EditTask) -> None:
    in_paths = getattr(args, "in_paths", None) or []
    if task is EditTask.COMBINE:
        grid, grids = None, tuple(read_roll(p) for p in in_paths)
    else:
        if len(in_paths) > 1:
            raise UsageError(f"{task.value} takes a single --in roll")
        grid = read_roll(in_paths[0]) if in_paths else None
        grids = ()
    request = EditRequest(
        task=task,
        input=grid,
        inputs=grids,
        regions=tuple(args.region or ()),
        signals=_read_signals(args.signals) if args.signals else null_signals(),
        t0_override=args.t0,
        k_override=args.k,
        seed=args.seed,
        extra_bars=args.extra_bars,
        gap_bars=args.gap_bars,
        out_bars=args.out_bars,
    )
    score_fn = _load_score_fn(args.checkpoint)
    grid_out, log = run_edit(request, score_fn)
    out = _require(args.out, "--out")
    write_roll(out, grid_out)
    log.update({
        "command": args.command,
        "out": str(out),
        "request": request_to_obj(request),
        "notes": int(grid_out.sum()),
    })
    _write_runlog(args, log)
    print(f"{task.value}: wrote {grid_out.sum()} onsets to {out}")


def _cmd_preprocess(args) -> None:
    in_dir = _require(args.in_path, "--in")
    out_dir = args.out or _default_cache()
    segments = ingest(in_dir)
    save_segments(segments, out_dir)
    _write_runlog(args, {
        "command": "preprocess",
        "in": str(in_dir),
        "out": str(out_dir),
        "segments": len(segments),
        "sources": sorted({s.source_id for s in segments}),
    })
    print(f"preprocess: cached {len(segments)} segments in {out_dir}")


def _cmd_make_toy(args) -> None:
    out_dir = args.out or _default_cache()
    segments = make_toy_corpus(args.seed, args.size)
    save_segments(segments, out_dir)
    _write_runlog(args, {
        "command": "make-toy",
        "out": str(out_dir),
        "seed": args.seed,
        "size": args.size,
        "segments": len(segments),
    })
    print(f"make-toy: cached {len(segments)} segments in {out_dir}")


def _cmd_train_stage1(args) -> None:
    from .denoiser import DenoiserConfig, EmbedMode, train

    cache = args.in_path or _default_cache()
    segments = load_segments(cache)
    config = DenoiserConfig(
        base_channels=args.base_channels,
        depth=args.depth,
        cond_embed_dim=args.cond_dim,
        embed_mode=EmbedMode(args.embed_mode),
        p_uncond=args.p_uncond,
    )
    ckpt = train(segments, config, steps=args.steps, seed=args.seed,
                 batch_size=args.batch_size, lr=args.lr,
                 lr_final=args.lr_final, crop_beats=args.crop_beats,
                 log_every=max(1, args.steps // 20))
    out = _require(args.out, "--out")
    ckpt_io.save(ckpt, out)
    _write_runlog(args, {
        "command": "train-stage1",
        "in": str(cache),
        "out": str(out),
        "seed": args.seed,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "lr_final": args.lr_final,
        "crop_beats": args.crop_beats,
        "embed_mode": args.embed_mode,
        "base_channels": args.base_channels,
        "depth": args.depth,
        "cond_dim": args.cond_dim,
        "p_uncond": args.p_uncond,
        "segments": len(segments),
    })
    print(f"train-stage1: saved checkpoint to {out}")


def _cmd_train_stage2(args) -> None:
    from .refiner import RefinerConfig, train_refiner

    cache = args.in_path or _default_cache()
    segments = load_segments(cache)
    config = RefinerConfig(
        decoder_layers=args.decoder_layers,
        hidden=args.hidden,
        heads=args.heads,
        dropout=args.dropout,
    )
    ckpt = train_refiner(segments, config, steps=args.steps, seed=args.seed,
                         batch_size=args.batch_size, lr=args.lr,
                         crop_bars=args.crop_bars,
                         log_every=max(1, args.steps // 20))
    out = _require(args.out, "--out")
    ckpt_io.save(ckpt, out)
    _write_runlog(args, {
        "command": "train-stage2",
        "in": str(cache),
        "out": str(out),
        "seed": args.seed,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "crop_bars": args.crop_bars,
        "decoder_layers": args.decoder_layers,
        "hidden": args.hidden,
        "heads": args.heads,
        "dropout": args.dropout,
        "segments": len(segments),
    })
    print(f"train-stage2: saved checkpoint to {out}")


def _cmd_generate(args) -> None:
    _run_edit_command(args, EditTask.GENERATE)


def _cmd_edit(args) -> None:
    _run_edit_command(args, EditTask(args.task))


def _cmd_refine(args) -> None:
    from .refiner import from_checkpoint, refine

    model = from_checkpoint(ckpt_io.load(_require(args.checkpoint, "--checkpoint")))
    grid = read_roll(_require(args.in_path, "--in"))
    score = refine(model, grid, seed=args.seed, max_tokens=args.max_tokens,
                   temperature=args.temperature)
    out = Path(_require(args.out, "--out"))
    out.write_bytes(write_smf(score))
    _write_runlog(args, {
        "command": "refine",
        "in": str(args.in_path),
        "out": str(out),
        "seed": args.seed,
        "max_tokens": args.max_tokens,
        "temperature": args.temperature,
        "notes": len(score.notes),
    })
    print(f"refine: wrote {len(score.notes)} notes to {out}")


def _cmd_eval(args) -> None:
    gen_score = _read_score(_require(args.in_path, "--in"))
    ref_score = _read_score(args.ref) if args.ref else None
    gen_q = quantize(gen_score, 1)
    target = None
    if args.signals:
        target = _read_signals(args.signals)
    elif ref_score is not None:
        target = extract_signals(quantize(ref_score, 1))
    gen_signals = extract_signals(gen_q) if target is not None else None

    def _csd(which: str):
        if target is None:
            return None
        return csd(gen_signals, target, which)

    report = MetricReport(
        pd=pd_similarity(gen_score, ref_score) if ref_score else None,
        dd=dd_similarity(gen_score, ref_score) if ref_score else None,
        csd_n=_csd("n"),
        csd_p=_csd("p"),
        or_=overlap_ratio(score_to_onsetroll(gen_q), read_roll(args.stroke))
        if args.stroke else None,
    )
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    _write_runlog(args, {
        "command": "eval",
        "in": str(args.in_path),
        "ref": str(args.ref) if args.ref else None,
        "signals": str(args.signals) if args.signals else None,
        "stroke": str(args.stroke) if args.stroke else None,
        "report": json.loads(text),
    })


def _cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    app = create_app(
        ckpt_io.load(_require(args.checkpoint, "--checkpoint")),
        stage2=ckpt_io.load(args.stage2) if args.stage2 else None,
        workers=args.workers,
        cors_origins=args.origin or ["*"],
    )
    _write_runlog(args, {
        "command": "serve",
        "checkpoint": str(args.checkpoint),
        "stage2": str(args.stage2) if args.stage2 else None,
        "host": args.host,
        "port": args.port,
        "workers": args.workers,
    })
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file of flag defaults; flags win")
    sub.add_argument("--log", help="run-log path (default <out>.runlog.json)")


def _add_edit_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--in", dest="in_paths", action="append", metavar="PATH",
                     help="input roll (.roll/.json/.mid); repeatable for combine")
    sub.add_argument("--out", help="output path (.roll/.json/.mid)")
    sub.add_argument("--checkpoint", help="stage-1 checkpoint path")
    sub.add_argument("--seed", type=_seed_flag, default=0)
    sub.add_argument("--t0", type=float, default=None,
                     help="reverse-chain fraction override in (0,1]")
    sub.add_argument("--k", type=int, default=None, help="repeat passes override")
    sub.add_argument("--signals", help="control-signal JSON path")
    sub.add_argument("--region", type=_region_flag, action="append",
                     metavar="p0:p1:b0:b1", help="edit rectangle; repeatable")
    sub.add_argument("--extra-bars", type=int, default=None)
    sub.add_argument("--gap-bars", type=int, default=DEFAULT_GAP_BARS)
    sub.add_argument("--out-bars", type=int, default=DEFAULT_OUT_BARS)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="rolledit",
                     description="Two-stage symbolic music generation and editing.")
    subs = parser.add_subparsers(dest="command", metavar="<command>")
    registry: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, func, help_text: str) -> argparse.ArgumentParser:
        s = subs.add_parser(name, help=help_text)
        s.set_defaults(func=func, command=name)
        _add_common(s)
        registry[name] = s
        return s

    s = sub("preprocess", _cmd_preprocess, "ingest a MIDI directory into the cache")
    s.add_argument("--in", dest="in_path", metavar="DIR", help="MIDI directory")
    s.add_argument("--out", help="cache directory (default $SDMUSE_CACHE or ./cache)")

    s = sub("make-toy", _cmd_make_toy, "generate the seeded toy corpus")
    s.add_argument("--out", help="cache directory")
    s.add_argument("--seed", type=_seed_flag, default=0)
    s.add_argument("--size", type=int, default=5000, help="number of pieces")

    s = sub("train-stage1", _cmd_train_stage1, "train the onsetroll denoiser")
    s.add_argument("--in", dest="in_path", metavar="DIR", help="segment cache")
    s.add_argument("--out", help="checkpoint output path")
    s.add_argument("--seed", type=_seed_flag, default=0)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--lr-final", type=float, default=None,
                   help="linear learning-rate decay target")
    s.add_argument("--crop-beats", type=int, default=None,
                   help="train on random windows of this many beats")
    s.add_argument("--embed-mode", choices=["word", "direct", "positional"],
                   default="word")
    s.add_argument("--base-channels", type=int, default=32)
    s.add_argument("--depth", type=int, default=3)
    s.add_argument("--cond-dim", type=int, default=32)
    s.add_argument("--p-uncond", type=float, default=0.5)

    s = sub("train-stage2", _cmd_train_stage2, "train the event-sequence refiner")
    s.add_argument("--in", dest="in_path", metavar="DIR", help="segment cache")
    s.add_argument("--out", help="checkpoint output path")
    s.add_argument("--seed", type=_seed_flag, default=0)
    s.add_argument("--steps", type=int, default=800)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=3e-4)
    s.add_argument("--crop-bars", type=int, default=8)
    s.add_argument("--decoder-layers", type=int, default=2)
    s.add_argument("--hidden", type=int, default=128)
    s.add_argument("--heads", type=int, default=4)
    s.add_argument("--dropout", type=float, default=0.1)

    s = sub("generate", _cmd_generate, "sample a fresh onsetroll")
    _add_edit_flags(s)

    s = sub("edit", _cmd_edit, "run a masked editing task")
    s.add_argument("task", choices=[t.value for t in EditTask])
    _add_edit_flags(s)

    s = sub("refine", _cmd_refine, "decode an onsetroll to MIDI (stage 2)")
    s.add_argument("--checkpoint", help="stage-2 checkpoint path")
    s.add_argument("--in", dest="in_path", metavar="PATH", help="input roll")
    s.add_argument("--out", help="output .mid path")
    s.add_argument("--seed", type=_seed_flag, default=0)
    s.add_argument("--max-tokens", type=int, default=900)
    s.add_argument("--temperature", type=float, default=1.0)

    s = sub("eval", _cmd_eval, "score generated output against references")
    s.add_argument("--in", dest="in_path", metavar="PATH", help="generated roll/MIDI")
    s.add_argument("--ref", help="reference roll/MIDI for pd/dd (and csd target)")
    s.add_argument("--signals", help="target control-signal JSON for csd")
    s.add_argument("--stroke", help="stroke roll for overlap ratio")
    s.add_argument("--out", help="metric report JSON path (also printed)")

    s = sub("serve", _cmd_serve, "start the HTTP job service")
    s.add_argument("--checkpoint", help="stage-1 checkpoint path")
    s.add_argument("--stage2", help="stage-2 checkpoint path (optional)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--origin", action="append",
                   help="allowed CORS origin; repeatable (default *)")

    return parser, registry


def _parse(argv: list[str]) -> argparse.Namespace:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a subcommand is required")
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: {exc}") from exc
        if not isinstance(overrides, dict):
            raise UsageError("--config: must hold a JSON object")
        sub = registry[args.command]
        known = {action.dest for action in sub._actions}
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()
                            if k.replace("-", "_") in known})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(f"rolledit: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"rolledit: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"rolledit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
