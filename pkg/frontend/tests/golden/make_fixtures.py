"""Regenerate the golden request fixtures from the server-side schema.

Run from the repository root:  python3 frontend/tests/golden/make_fixtures.py
The UI serializer must reproduce these files byte-for-byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from rolledit.editor import EditRequest, EditTask, Region, request_to_obj
from rolledit.signals import ControlSignals, chord_index

HERE = Path(__file__).parent


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def roll_with(cells) -> np.ndarray:
    grid = np.zeros((128, 128), dtype=np.uint8)
    for pitch, beat in cells:
        grid[pitch, beat] = 1
    return grid


def main() -> None:
    three = EditRequest(
        task=EditTask.STROKE_GENERATE,
        input=roll_with([(60, 0), (64, 4), (67, 8)]),
    )
    (HERE / "stroke3.json").write_text(canonical(request_to_obj(three)))

    edit = EditRequest(
        task=EditTask.STROKE_EDIT,
        input=roll_with([(48, 2), (55, 6)]),
        regions=(Region(40, 72, 0, 32), Region(0, 128, 64, 96)),
        seed=5,
    )
    (HERE / "stroke_edit_regions.json").write_text(canonical(request_to_obj(edit)))

    curve = np.array([beat % 8 for beat in range(128)], dtype=np.int64)
    histogram = np.zeros(128, dtype=np.int64)
    histogram[60] = 12
    histogram[64] = 8
    chords = np.repeat(
        [chord_index(span % 12, "maj") for span in range(32)], 4
    ).astype(np.int64)
    style = EditRequest(
        task=EditTask.STYLE_TRANSFER,
        input=roll_with([(60, 0)]),
        signals=ControlSignals(c_n=curve, c_p=histogram, c_c=chords),
        seed=9,
    )
    (HERE / "style_curve.json").write_text(canonical(request_to_obj(style)))

    generate = EditRequest(task=EditTask.GENERATE, seed=3, out_bars=16)
    (HERE / "generate16.json").write_text(canonical(request_to_obj(generate)))
    print("wrote", sorted(p.name for p in HERE.glob("*.json")))


if __name__ == "__main__":
    main()
