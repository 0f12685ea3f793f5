// Editor state and its pure update functions. Every mutation returns a
// new state; paint/erase push the prior grid onto the undo stack.

import { Cell, CellSet, cellKey, inBounds } from "./roll";
import { DEFAULT_OUT_BARS, NO_CHORD, NUM_BEATS, Task } from "./types";

export type BrushMode = "PAINT" | "ERASE" | "MASK_SELECT";

export interface MaskRect {
  p0: number;
  p1: number;
  b0: number;
  b1: number;
}

export interface EditorState {
  roll: CellSet;
  brush: BrushMode;
  maskRects: MaskRect[];
  densityCurve: number[];
  pitchHistogram: number[];
  // one chord index per 4-beat span; NO_CHORD by default
  chordSpans: number[];
  useSignals: boolean;
  task: Task;
  seed: number;
  extraBars: number | null;
  outBars: number;
  activeJobId: string | null;
  resultCells: CellSet | null;
  playbackBeat: number;
  undoStack: CellSet[];
}

export function initialState(): EditorState {
  return {
    roll: new Set(),
    brush: "PAINT",
    maskRects: [],
    densityCurve: new Array(NUM_BEATS).fill(0),
    pitchHistogram: new Array(128).fill(0),
    chordSpans: new Array(NUM_BEATS / 4).fill(NO_CHORD),
    useSignals: false,
    task: "stroke-generate",
    seed: 0,
    extraBars: null,
    outBars: DEFAULT_OUT_BARS,
    activeJobId: null,
    resultCells: null,
    playbackBeat: 0,
    undoStack: [],
  };
}

// PAINT sets, ERASE clears; out-of-bounds cells are clipped, never thrown.
export function paintStroke(state: EditorState, cells: Cell[]): EditorState {
  if (state.brush === "MASK_SELECT") return state;
  const roll = new Set(state.roll);
  for (const [pitch, beat] of cells) {
    if (!inBounds(pitch, beat)) continue;
    if (state.brush === "PAINT") roll.add(cellKey(pitch, beat));
    else roll.delete(cellKey(pitch, beat));
  }
  return { ...state, roll, undoStack: [...state.undoStack, state.roll] };
}

export function undo(state: EditorState): EditorState {
  if (state.undoStack.length === 0) return state;
  const stack = state.undoStack.slice(0, -1);
  return { ...state, roll: state.undoStack[state.undoStack.length - 1], undoStack: stack };
}

export function setBrush(state: EditorState, brush: BrushMode): EditorState {
  return { ...state, brush };
}

export function selectTask(state: EditorState, task: Task): EditorState {
  return { ...state, task };
}

export function setSeed(state: EditorState, seed: number): EditorState {
  if (!Number.isInteger(seed) || seed < 0) return state;
  return { ...state, seed };
}

export function addMaskRect(state: EditorState, rect: MaskRect): EditorState {
  const clipped: MaskRect = {
    p0: Math.max(0, Math.min(rect.p0, rect.p1)),
    p1: Math.min(128, Math.max(rect.p0, rect.p1)),
    b0: Math.max(0, Math.min(rect.b0, rect.b1)),
    b1: Math.min(NUM_BEATS, Math.max(rect.b0, rect.b1)),
  };
  if (clipped.p0 >= clipped.p1 || clipped.b0 >= clipped.b1) return state;
  return { ...state, maskRects: [...state.maskRects, clipped] };
}

export function clearMaskRects(state: EditorState): EditorState {
  return { ...state, maskRects: [] };
}

const clampValue = (v: number) => Math.max(0, Math.min(127, Math.round(v)));

export function editDensityCurve(state: EditorState, values: number[]): EditorState {
  if (values.length !== NUM_BEATS) return state;
  return { ...state, densityCurve: values.map(clampValue), useSignals: true };
}

export function editPitchHistogram(state: EditorState, values: number[]): EditorState {
  if (values.length !== 128) return state;
  return { ...state, pitchHistogram: values.map((v) => Math.max(0, Math.round(v))), useSignals: true };
}

export function setChordSpan(state: EditorState, span: number, chord: number): EditorState {
  if (span < 0 || span >= state.chordSpans.length) return state;
  if (!Number.isInteger(chord) || chord < 0 || chord > NO_CHORD) return state;
  const chordSpans = [...state.chordSpans];
  chordSpans[span] = chord;
  return { ...state, chordSpans, useSignals: true };
}

// Default curve when none was edited: extract density from the grid so
// the server-side extraction of the same roll agrees.
export function densityFromRoll(roll: CellSet, n = NUM_BEATS): number[] {
  const out = new Array(n).fill(0);
  for (const key of roll) {
    const beat = Number(key.split(":")[1]);
    out[beat] += 1;
  }
  return out.map((v) => Math.min(v, 127));
}

export function pitchHistogramFromRoll(roll: CellSet): number[] {
  const out = new Array(128).fill(0);
  for (const key of roll) out[Number(key.split(":")[0])] += 1;
  return out;
}

export function jobStarted(state: EditorState, id: string): EditorState {
  return { ...state, activeJobId: id, resultCells: null };
}

export function jobFinished(state: EditorState, result: CellSet | null): EditorState {
  return { ...state, activeJobId: null, resultCells: result };
}

// Fold the result overlay into the working grid (one-click adopt).
export function adoptResult(state: EditorState): EditorState {
  if (!state.resultCells) return state;
  return {
    ...state,
    roll: new Set(state.resultCells),
    resultCells: null,
    undoStack: [...state.undoStack, state.roll],
  };
}
