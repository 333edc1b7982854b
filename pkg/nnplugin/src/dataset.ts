/**
 * Reader for the generated datasets the fmotrack CLI writes: one directory
 * per sample holding frame_1..5.png (RGB), gt.png (binary L) and meta.json,
 * plus a top-level manifest.json with the train/val split.
 */
import fs from 'node:fs';
import path from 'node:path';
import {PNG} from 'pngjs';
import {DataError} from './errors.js';
import {WINDOW_CHANNELS} from './protocol.js';

export interface Manifest {
  n_samples: number;
  splits: {train: string[]; val: string[]};
  [key: string]: unknown;
}

export interface Sample {
  name: string;
  h: number;
  w: number;
  /** (h*w*15) float32, row-major channel-minor, values in [0, 1]. */
  window: Float32Array;
  /** (h*w) float32 in {0, 1}, middle-frame streak support. */
  gt: Float32Array;
}

export function readManifest(root: string): Manifest {
  const p = path.join(root, 'manifest.json');
  if (!fs.existsSync(p)) throw new DataError(`no manifest.json under ${root}`);
  const manifest = JSON.parse(fs.readFileSync(p, 'utf8'));
  if (!manifest.splits || !Array.isArray(manifest.splits.train)
      || !Array.isArray(manifest.splits.val)) {
    throw new DataError(`manifest at ${p} has no train/val splits`);
  }
  return manifest as Manifest;
}

function readPng(file: string): PNG {
  return PNG.sync.read(fs.readFileSync(file));
}

/** Decode one sample directory; throws DataError on anything inconsistent. */
export function loadSample(root: string, name: string): Sample {
  const dir = path.join(root, name);
  const frames: PNG[] = [];
  for (let i = 1; i <= 5; i++) {
    const file = path.join(dir, `frame_${i}.png`);
    let png: PNG;
    try {
      png = readPng(file);
    } catch (err) {
      throw new DataError(`${name}/frame_${i}.png unreadable: ${(err as Error).message}`);
    }
    frames.push(png);
  }
  const h = frames[0].height;
  const w = frames[0].width;
  for (const f of frames) {
    if (f.height !== h || f.width !== w) {
      throw new DataError(`${name}: frame sizes differ`);
    }
  }

  // pngjs always decodes to RGBA8; stack the five RGB triples channel-minor.
  const window = new Float32Array(h * w * WINDOW_CHANNELS);
  for (let f = 0; f < 5; f++) {
    const data = frames[f].data;
    for (let px = 0; px < h * w; px++) {
      const src = px * 4;
      const dst = px * WINDOW_CHANNELS + f * 3;
      window[dst] = data[src] / 255;
      window[dst + 1] = data[src + 1] / 255;
      window[dst + 2] = data[src + 2] / 255;
    }
  }

  let gtPng: PNG;
  try {
    gtPng = readPng(path.join(dir, 'gt.png'));
  } catch (err) {
    throw new DataError(`${name}/gt.png unreadable: ${(err as Error).message}`);
  }
  if (gtPng.height !== h || gtPng.width !== w) {
    throw new DataError(`${name}: gt.png size differs from frames`);
  }
  const gt = new Float32Array(h * w);
  for (let px = 0; px < h * w; px++) gt[px] = gtPng.data[px * 4] > 127 ? 1 : 0;

  return {name, h, w, window, gt};
}

export interface LoadResult {
  samples: Sample[];
  /** Names that failed to decode and were skipped. */
  skipped: string[];
}

/** Load a list of samples, skipping (and counting) corrupt ones. */
export function loadSamples(root: string, names: string[]): LoadResult {
  const samples: Sample[] = [];
  const skipped: string[] = [];
  for (const name of names) {
    try {
      samples.push(loadSample(root, name));
    } catch (err) {
      if (err instanceof DataError) {
        skipped.push(name);
        continue;
      }
      throw err;
    }
  }
  if (samples.length === 0) {
    throw new DataError(`no loadable samples under ${root} (${skipped.length} skipped)`);
  }
  const {h, w} = samples[0];
  for (const s of samples) {
    if (s.h !== h || s.w !== w) {
      throw new DataError(`sample sizes differ: ${s.name} is ${s.h}x${s.w}, expected ${h}x${w}`);
    }
  }
  return {samples, skipped};
}

/** All gt.png paths under a dataset root, sorted by full path. */
export function sortedGtPaths(root: string): string[] {
  const out: string[] = [];
  const walk = (dir: string) => {
    for (const entry of fs.readdirSync(dir, {withFileTypes: true})) {
      const p = path.join(dir, entry.name);
      if (entry.isDirectory()) walk(p);
      else if (entry.name === 'gt.png') out.push(p);
    }
  };
  walk(root);
  out.sort();
  return out;
}

export function readGtMask(file: string): {h: number; w: number; mask: Float32Array} {
  const png = readPng(file);
  const mask = new Float32Array(png.height * png.width);
  for (let px = 0; px < mask.length; px++) mask[px] = png.data[px * 4] / 255;
  return {h: png.height, w: png.width, mask};
}

/**
 * Minimal .npy reader for the float32 2-D arrays the segment stage writes.
 * Handles format 1.0 headers, C order, '<f4' dtype only.
 */
export function readNpy(file: string): {shape: number[]; data: Float32Array} {
  const blob = fs.readFileSync(file);
  if (blob.length < 10 || blob[0] !== 0x93 || blob.toString('ascii', 1, 6) !== 'NUMPY') {
    throw new DataError(`${file} is not a .npy file`);
  }
  const major = blob[6];
  const headerLen = major === 1 ? blob.readUInt16LE(8) : blob.readUInt32LE(8);
  const headerEnd = (major === 1 ? 10 : 12) + headerLen;
  const header = blob.toString('latin1', major === 1 ? 10 : 12, headerEnd);
  if (!header.includes("'<f4'")) {
    throw new DataError(`${file}: unsupported dtype in header ${header.trim()}`);
  }
  if (!header.includes('False')) {
    throw new DataError(`${file}: fortran order not supported`);
  }
  const m = header.match(/'shape':\s*\(([^)]*)\)/);
  if (!m) throw new DataError(`${file}: no shape in header`);
  const shape = m[1].split(',').map(s => s.trim()).filter(Boolean).map(Number);
  const count = shape.reduce((a, b) => a * b, 1);
  if (blob.length < headerEnd + count * 4) {
    throw new DataError(`${file}: truncated payload`);
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = blob.readFloatLE(headerEnd + i * 4);
  return {shape, data};
}
