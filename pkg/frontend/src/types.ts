// Wire types for the rolledit service HTTP/JSON API.

export type Task =
  | "stroke-generate"
  | "stroke-edit"
  | "inpaint"
  | "outpaint"
  | "combine"
  | "style-transfer"
  | "generate";

export const TASKS: Task[] = [
  "stroke-generate",
  "stroke-edit",
  "inpaint",
  "outpaint",
  "combine",
  "style-transfer",
  "generate",
];

export const NUM_PITCHES = 128;
export const NUM_BEATS = 128;
export const DEFAULT_GAP_BARS = 4;
export const DEFAULT_OUT_BARS = 32;
export const NUM_CHORDS = 96;
export const NO_CHORD = 96;

// Cell-list roll encoding shared with the server, cells sorted by
// [pitch, beat].
export interface RollObj {
  m: number;
  n: number;
  cells: [number, number][];
}

export interface SignalsObj {
  c_n?: number[];
  c_p?: number[];
  c_c?: number[];
  null?: boolean;
}

// Half-open rectangle [p0,p1) x [b0,b1) in (pitch, beat) coordinates.
export type RegionTuple = [number, number, number, number];

export interface EditRequestObj {
  task: Task;
  seed: number;
  input?: RollObj;
  inputs?: RollObj[];
  regions?: RegionTuple[];
  signals: SignalsObj;
  t0?: number;
  k?: number;
  extra_bars?: number;
  gap_bars?: number;
  out_bars?: number;
}

export type JobStatus = "QUEUED" | "RUNNING" | "DONE" | "FAILED";

export interface JobResult {
  roll: RollObj;
  report: Record<string, number>;
  notes: number;
  run_log: Record<string, unknown>;
}

export interface JobView {
  id: string;
  status: JobStatus;
  request: EditRequestObj;
  error: string | null;
  created: number;
  started: number | null;
  finished: number | null;
  result: JobResult | null;
}

export interface CheckpointInfo {
  version: string;
  embed_mode: string;
  schedule: { beta_start: number; beta_end: number; num_steps: number };
}

// Error body for 400/422 responses; field carries the offending path.
export interface ServiceError {
  error: string;
  field?: string;
}
