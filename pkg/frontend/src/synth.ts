// Minimal audition path: render a cell set to PCM with decaying sine
// partials, one voice per onset, one beat per note.

import { CellSet, parseKey } from "./roll";

export interface SynthOptions {
  sampleRate: number;
  bpm: number;
  gain: number;
}

export const DEFAULT_SYNTH: SynthOptions = { sampleRate: 22_050, bpm: 110, gain: 0.2 };

export function pitchToHz(pitch: number): number {
  return 440 * 2 ** ((pitch - 69) / 12);
}

export function cellsToPcm(cells: CellSet, opts: SynthOptions = DEFAULT_SYNTH): Float32Array {
  const beatSec = 60 / opts.bpm;
  let lastBeat = 0;
  for (const key of cells) lastBeat = Math.max(lastBeat, parseKey(key)[1]);
  const total = Math.ceil((lastBeat + 2) * beatSec * opts.sampleRate);
  const pcm = new Float32Array(total);
  for (const key of cells) {
    const [pitch, beat] = parseKey(key);
    const hz = pitchToHz(pitch);
    const start = Math.floor(beat * beatSec * opts.sampleRate);
    const length = Math.floor(beatSec * opts.sampleRate);
    for (let i = 0; i < length && start + i < total; i += 1) {
      const t = i / opts.sampleRate;
      const env = Math.exp(-4 * (i / length));
      pcm[start + i] += opts.gain * env * Math.sin(2 * Math.PI * hz * t);
    }
  }
  // soft-limit to [-1, 1]
  for (let i = 0; i < pcm.length; i += 1) pcm[i] = Math.tanh(pcm[i]);
  return pcm;
}

// Play through WebAudio when available; callers in tests stick to
// cellsToPcm and never touch an AudioContext.
export function playCells(cells: CellSet, opts: SynthOptions = DEFAULT_SYNTH): void {
  const Ctor = (globalThis as { AudioContext?: new () => AudioContext }).AudioContext;
  if (!Ctor) return;
  const ctx = new Ctor();
  const pcm = cellsToPcm(cells, opts);
  const buffer = ctx.createBuffer(1, pcm.length, opts.sampleRate);
  buffer.getChannelData(0).set(pcm);
  const source = ctx.createBufferSource();
  source.buffer = buffer;
  source.connect(ctx.destination);
  source.start();
}
