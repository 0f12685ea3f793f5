// Canvas-free layer model: what to draw, as cell sets per layer. The
// result stays a separate overlay so user strokes remain distinguishable
// until the user adopts it.

import { CellSet } from "./roll";
import { EditorState, MaskRect } from "./state";

export interface RenderLayers {
  strokes: CellSet;
  result: CellSet;
  maskRects: MaskRect[];
  playbackBeat: number;
}

export function renderLayers(state: EditorState): RenderLayers {
  return {
    strokes: new Set(state.roll),
    result: new Set(state.resultCells ?? []),
    maskRects: [...state.maskRects],
    playbackBeat: state.playbackBeat,
  };
}

export const CELL_PX = 6;

export const LAYER_COLORS = {
  grid: "#2b2b33",
  barLine: "#44444f",
  stroke: "#4cc38a",
  result: "#6f8dfb",
  mask: "rgba(255, 196, 0, 0.25)",
  cursor: "#ff6464",
};

// Draw onto a 2D context; pure function of the layer model so tests can
// assert on renderLayers alone.
export function drawLayers(
  ctx: CanvasRenderingContext2D,
  layers: RenderLayers,
  beats: number,
  pitches = 128,
): void {
  ctx.fillStyle = LAYER_COLORS.grid;
  ctx.fillRect(0, 0, beats * CELL_PX, pitches * CELL_PX);
  ctx.strokeStyle = LAYER_COLORS.barLine;
  for (let b = 0; b <= beats; b += 4) {
    ctx.beginPath();
    ctx.moveTo(b * CELL_PX + 0.5, 0);
    ctx.lineTo(b * CELL_PX + 0.5, pitches * CELL_PX);
    ctx.stroke();
  }
  const paint = (cells: CellSet, color: string) => {
    ctx.fillStyle = color;
    for (const key of cells) {
      const [p, b] = key.split(":").map(Number);
      // pitch 127 at the top row
      ctx.fillRect(b * CELL_PX, (pitches - 1 - p) * CELL_PX, CELL_PX - 1, CELL_PX - 1);
    }
  };
  paint(layers.strokes, LAYER_COLORS.stroke);
  paint(layers.result, LAYER_COLORS.result);
  ctx.fillStyle = LAYER_COLORS.mask;
  for (const r of layers.maskRects) {
    ctx.fillRect(
      r.b0 * CELL_PX,
      (pitches - r.p1) * CELL_PX,
      (r.b1 - r.b0) * CELL_PX,
      (r.p1 - r.p0) * CELL_PX,
    );
  }
  ctx.fillStyle = LAYER_COLORS.cursor;
  ctx.fillRect(layers.playbackBeat * CELL_PX, 0, 2, pitches * CELL_PX);
}
