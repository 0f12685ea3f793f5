// EditorState <-> EditRequest JSON. The request body is canonical JSON
// (sorted keys, no whitespace) so golden fixtures compare byte-for-byte.

import { CellSet, cellsFromObj, cellsToObj } from "./roll";
import { EditorState, MaskRect, initialState } from "./state";
import {
  DEFAULT_OUT_BARS,
  EditRequestObj,
  RegionTuple,
  RollObj,
  SignalsObj,
} from "./types";

export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  const body = entries
    .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`)
    .join(",");
  return `{${body}}`;
}

function signalsObj(state: EditorState): SignalsObj {
  if (!state.useSignals) return { null: true };
  const c_c: number[] = [];
  for (const chord of state.chordSpans) c_c.push(chord, chord, chord, chord);
  return { c_n: [...state.densityCurve], c_p: [...state.pitchHistogram], c_c };
}

const SINGLE_INPUT_TASKS = new Set([
  "stroke-generate",
  "stroke-edit",
  "inpaint",
  "outpaint",
  "style-transfer",
]);

export function buildRequest(state: EditorState): EditRequestObj {
  const req: EditRequestObj = {
    task: state.task,
    seed: state.seed,
    signals: signalsObj(state),
  };
  if (SINGLE_INPUT_TASKS.has(state.task)) {
    req.input = cellsToObj(state.roll);
  }
  if (state.task === "stroke-edit" || state.task === "inpaint") {
    if (state.maskRects.length > 0) {
      req.regions = state.maskRects.map(
        (r): RegionTuple => [r.p0, r.p1, r.b0, r.b1],
      );
    }
  }
  if (state.task === "outpaint" && state.extraBars !== null) {
    req.extra_bars = state.extraBars;
  }
  if (state.task === "generate" && state.outBars !== DEFAULT_OUT_BARS) {
    req.out_bars = state.outBars;
  }
  return req;
}

export function requestJson(state: EditorState): string {
  return canonicalJson(buildRequest(state));
}

// Rebuild editor state from a request, inverting buildRequest on every
// user-visible field it carries.
export function applyRequest(req: EditRequestObj): EditorState {
  const state = initialState();
  state.task = req.task;
  state.seed = req.seed ?? 0;
  if (req.input) state.roll = cellsFromObj(req.input);
  if (req.regions) {
    state.maskRects = req.regions.map(
      ([p0, p1, b0, b1]): MaskRect => ({ p0, p1, b0, b1 }),
    );
  }
  if (req.signals && !req.signals.null) {
    state.useSignals = true;
    state.densityCurve = [...(req.signals.c_n ?? state.densityCurve)];
    state.pitchHistogram = [...(req.signals.c_p ?? state.pitchHistogram)];
    const c_c = req.signals.c_c ?? [];
    for (let span = 0; span * 4 < c_c.length; span += 1) {
      state.chordSpans[span] = c_c[span * 4];
    }
  }
  if (req.extra_bars !== undefined) state.extraBars = req.extra_bars;
  if (req.out_bars !== undefined) state.outBars = req.out_bars;
  return state;
}

export function resultCells(roll: RollObj): CellSet {
  return cellsFromObj(roll);
}
