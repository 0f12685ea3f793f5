// Browser wiring: one canvas, a task picker, submit/poll/adopt. All
// logic lives in the pure modules; this file only owns DOM plumbing.

import { ServiceClient, LocalValidationError, ServiceRequestError } from "./client";
import { CELL_PX, drawLayers, renderLayers } from "./render";
import { resultCells } from "./serialize";
import {
  EditorState,
  addMaskRect,
  adoptResult,
  initialState,
  jobFinished,
  jobStarted,
  paintStroke,
  selectTask,
  setBrush,
  setSeed,
  undo,
} from "./state";
import { playCells } from "./synth";
import { NUM_BEATS, TASKS, Task } from "./types";

export function mountEditor(root: HTMLElement, baseUrl = ""): void {
  let state: EditorState = initialState();
  const client = new ServiceClient(baseUrl);

  const canvas = document.createElement("canvas");
  canvas.width = NUM_BEATS * CELL_PX;
  canvas.height = 128 * CELL_PX;
  const bar = document.createElement("div");
  const status = document.createElement("span");

  const taskPick = document.createElement("select");
  for (const task of TASKS) {
    const opt = document.createElement("option");
    opt.value = task;
    opt.textContent = task;
    taskPick.appendChild(opt);
  }
  const seedBox = document.createElement("input");
  seedBox.type = "number";
  seedBox.value = "0";
  const buttons: Record<string, HTMLButtonElement> = {};
  for (const name of ["paint", "erase", "mask", "undo", "submit", "adopt", "play"]) {
    const b = document.createElement("button");
    b.textContent = name;
    buttons[name] = b;
    bar.appendChild(b);
  }
  bar.appendChild(taskPick);
  bar.appendChild(seedBox);
  bar.appendChild(status);
  root.appendChild(bar);
  root.appendChild(canvas);

  const ctx = canvas.getContext("2d");
  const redraw = () => {
    if (ctx) drawLayers(ctx, renderLayers(state), NUM_BEATS);
  };
  const update = (next: EditorState) => {
    state = next;
    redraw();
  };

  const cellAt = (ev: MouseEvent): [number, number] => {
    const rect = canvas.getBoundingClientRect();
    const beat = Math.floor((ev.clientX - rect.left) / CELL_PX);
    const pitch = 127 - Math.floor((ev.clientY - rect.top) / CELL_PX);
    return [pitch, beat];
  };

  let dragStart: [number, number] | null = null;
  canvas.addEventListener("mousedown", (ev) => {
    dragStart = cellAt(ev);
    if (state.brush !== "MASK_SELECT") update(paintStroke(state, [dragStart]));
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (dragStart && state.brush !== "MASK_SELECT") {
      update(paintStroke(state, [cellAt(ev)]));
    }
  });
  canvas.addEventListener("mouseup", (ev) => {
    if (dragStart && state.brush === "MASK_SELECT") {
      const [p0, b0] = dragStart;
      const [p1, b1] = cellAt(ev);
      update(addMaskRect(state, {
        p0: Math.min(p0, p1), p1: Math.max(p0, p1) + 1,
        b0: Math.min(b0, b1), b1: Math.max(b0, b1) + 1,
      }));
    }
    dragStart = null;
  });

  buttons.paint.onclick = () => update(setBrush(state, "PAINT"));
  buttons.erase.onclick = () => update(setBrush(state, "ERASE"));
  buttons.mask.onclick = () => update(setBrush(state, "MASK_SELECT"));
  buttons.undo.onclick = () => update(undo(state));
  buttons.adopt.onclick = () => update(adoptResult(state));
  buttons.play.onclick = () => playCells(state.resultCells ?? state.roll);
  taskPick.onchange = () => update(selectTask(state, taskPick.value as Task));
  seedBox.onchange = () => update(setSeed(state, Number(seedBox.value)));

  buttons.submit.onclick = async () => {
    try {
      status.textContent = "submitting";
      const id = await client.submitEdit(state);
      update(jobStarted(state, id));
      status.textContent = `job ${id.slice(0, 8)}…`;
      const view = await client.pollJob(id);
      if (view.status === "DONE" && view.result) {
        update(jobFinished(state, resultCells(view.result.roll)));
        status.textContent = "done";
      } else {
        update(jobFinished(state, null));
        status.textContent = `failed: ${view.error ?? "unknown"}`;
      }
    } catch (err) {
      update(jobFinished(state, null));
      if (err instanceof LocalValidationError || err instanceof ServiceRequestError) {
        status.textContent = err.message;
      } else {
        status.textContent = String(err);
      }
    }
  };

  redraw();
}
