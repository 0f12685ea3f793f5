"""End-to-end tour on a small toy setup: corpus, both training stages,
three kinds of edits, refinement to MIDI, and metrics.

Runs in five to ten minutes on a laptop CPU. The stage-1 model here is
deliberately tiny; it anchors edits well but is too small for free-running
generation, so this tour sticks to the editing tasks. The README
quickstart has the larger recipe whose from-scratch generation the
acceptance suite certifies. Artifacts land in demos/out/.
"""

from __future__ import annotations

import pathlib

import numpy as np

from rolledit.checkpoint import save
from rolledit.corpus import make_toy_corpus
from rolledit.denoiser import DenoiserConfig, as_score_function, train
from rolledit.editor import EditRequest, EditTask, Region, run_edit
from rolledit.metrics import csd, overlap_ratio, pd_similarity
from rolledit.midi_io import quantize, write_smf
from rolledit.refiner import RefinerConfig, from_checkpoint, refine, train_refiner
from rolledit.roll import onsetroll_to_score, roll_to_json
from rolledit.signals import extract_signals

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)


def say(text: str) -> None:
    print(f"\n== {text}", flush=True)


def signals_of(grid):
    return extract_signals(onsetroll_to_score(grid), grid)


say("corpus: 2000 seeded toy pieces (32 bars each, known chords/density)")
corpus = make_toy_corpus(seed=0, size=2000)
held = make_toy_corpus(seed=123, size=24)
print(f"{len(corpus)} segments, roll shape {corpus[0].roll.shape}")

say("stage 1: train a small onsetroll denoiser (~5 min)")
cfg = DenoiserConfig(base_channels=8, depth=2, cond_embed_dim=8, p_uncond=0.25)
ckpt = train(corpus, cfg, steps=10_000, seed=0, batch_size=8,
             lr=3e-4, lr_final=3e-5, crop_beats=16, log_every=2000)
save(ckpt, OUT / "demo_s1.ckpt")
score_fn = as_score_function(ckpt)

say("stroke-generate: sketch a sparse outline, let the model fill it in")
pts = np.argwhere(held[1].roll)[::2]
stroke = np.zeros((128, 128), dtype=np.uint8)
stroke[pts[:, 0], pts[:, 1]] = 1
grid, log = run_edit(EditRequest(task=EditTask.STROKE_GENERATE, input=stroke,
                                 signals=held[1].signals, seed=11,
                                 k_override=1), score_fn)
print(f"run log: {log}")
print(f"stroke kept: overlap ratio {overlap_ratio(grid, stroke):.2f} "
      f"({int(stroke.sum())} stroke cells, {int(grid.sum())} generated)")
(OUT / "stroke_result.json").write_text(roll_to_json(grid))

say("style transfer: push a sparse piece toward a dense piece's signals")
src, target = held[1], held[12].signals
styled, _ = run_edit(EditRequest(task=EditTask.STYLE_TRANSFER, input=src.roll,
                                 signals=target, seed=7), score_fn)
print(f"onsets {int(src.roll.sum())} -> {int(styled.sum())} "
      f"(target piece has {int(held[12].roll.sum())})")
print(f"density-curve distance to target: before "
      f"{csd(src.signals, target, 'n'):.3f}, after "
      f"{csd(signals_of(styled), target, 'n'):.3f}")

say("inpaint: knock out bars 8..16 in a held-out piece and regenerate")
piece = held[2].roll.copy()
region = Region(p0=0, p1=128, b0=32, b1=64)
damaged = piece.copy()
damaged[:, 32:64] = 0
edited, _ = run_edit(EditRequest(task=EditTask.INPAINT, input=damaged,
                                 regions=(region,), signals=held[2].signals,
                                 seed=5), score_fn)
outside = (slice(None), np.r_[0:32, 64:128])
print(f"outside the mask {int((edited[outside] != damaged[outside]).sum())} "
      f"cells changed (preserved exactly); "
      f"{int(edited[:, 32:64].sum())} onsets regenerated inside "
      f"(original had {int(piece[:, 32:64].sum())})")

say("stage 2: train the refiner and render the edited piece as MIDI (~2 min)")
ckpt2 = train_refiner(corpus[:300], RefinerConfig(hidden=64, heads=4),
                      steps=1500, seed=0, log_every=300)
refiner = from_checkpoint(ckpt2)
score = refine(refiner, edited, seed=1, max_tokens=2000, temperature=0.85)
(OUT / "edited.mid").write_bytes(write_smf(score))
original = onsetroll_to_score(held[2].roll)
print(f"{len(score.notes)} notes written to {OUT / 'edited.mid'}")
print(f"pitch-distribution similarity to the original piece: "
      f"{pd_similarity(quantize(score, 1), quantize(original, 1)):.2f}")

say("done; inspect demos/out/ (README quickstart covers full generation)")
