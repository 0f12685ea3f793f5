// Pre-submit validation. Mirrors the service's semantic checks so bad
// requests never leave the editor; every finding carries a field path.

import { EditorState } from "./state";
import { NUM_BEATS } from "./types";

export interface ValidationError {
  field: string;
  message: string;
}

export function validateForSubmit(state: EditorState): ValidationError[] {
  const errors: ValidationError[] = [];
  if (state.activeJobId !== null) {
    errors.push({ field: "job", message: "a job is already in flight" });
  }
  if (state.task === "stroke-edit" || state.task === "inpaint") {
    if (state.maskRects.length === 0) {
      errors.push({
        field: "regions",
        message: `${state.task} needs at least one mask rectangle`,
      });
    }
  }
  state.maskRects.forEach((r, i) => {
    const ok =
      r.p0 >= 0 && r.p0 < r.p1 && r.p1 <= 128 &&
      r.b0 >= 0 && r.b0 < r.b1 && r.b1 <= NUM_BEATS;
    if (!ok) {
      errors.push({ field: `regions[${i}]`, message: "rectangle out of bounds" });
    }
  });
  if (state.task === "style-transfer" && !state.useSignals) {
    errors.push({
      field: "signals",
      message: "style transfer needs target signals",
    });
  }
  if (state.task === "outpaint" && (state.extraBars === null || state.extraBars < 1)) {
    errors.push({ field: "extra_bars", message: "outpaint needs extra_bars >= 1" });
  }
  if (state.task === "combine") {
    errors.push({
      field: "inputs",
      message: "combine needs two rolls; use the CLI for multi-roll jobs",
    });
  }
  if (state.task === "generate" && (state.outBars < 1 || state.outBars > 32)) {
    errors.push({ field: "out_bars", message: "out_bars must lie in 1..32" });
  }
  if (state.useSignals) {
    if (state.densityCurve.some((v) => v < 0 || v > 127)) {
      errors.push({ field: "signals", message: "density values must lie in 0..127" });
    }
  }
  return errors;
}
