// Cell-set helpers for the 128x128 grid. Cells are (pitch, beat) pairs
// stored in a Set keyed "pitch:beat" so layer comparisons stay O(n).

import { NUM_BEATS, NUM_PITCHES, RollObj } from "./types";

export type Cell = [number, number];
export type CellSet = Set<string>;

export function cellKey(pitch: number, beat: number): string {
  return `${pitch}:${beat}`;
}

export function parseKey(key: string): Cell {
  const [p, b] = key.split(":");
  return [Number(p), Number(b)];
}

export function inBounds(pitch: number, beat: number, n = NUM_BEATS): boolean {
  return (
    Number.isInteger(pitch) && Number.isInteger(beat) &&
    pitch >= 0 && pitch < NUM_PITCHES && beat >= 0 && beat < n
  );
}

export function cellSetEqual(a: CellSet, b: CellSet): boolean {
  if (a.size !== b.size) return false;
  for (const key of a) if (!b.has(key)) return false;
  return true;
}

// Serialize to the wire format: cells sorted by pitch, then beat.
export function cellsToObj(cells: CellSet, n = NUM_BEATS): RollObj {
  const pairs = [...cells].map(parseKey);
  pairs.sort((x, y) => x[0] - y[0] || x[1] - y[1]);
  return { m: NUM_PITCHES, n, cells: pairs };
}

export function cellsFromObj(obj: RollObj): CellSet {
  const out: CellSet = new Set();
  for (const [pitch, beat] of obj.cells) {
    if (!inBounds(pitch, beat, obj.n)) {
      throw new Error(`cell [${pitch},${beat}] out of range for ${obj.m}x${obj.n}`);
    }
    out.add(cellKey(pitch, beat));
  }
  return out;
}
