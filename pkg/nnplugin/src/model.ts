/**
 * Small encoder-decoder over 15-channel windows (5 stacked RGB frames),
 * sigmoid mask head.
 *
 * Convolutions are expressed as shifted-slice concat + matMul (im2col) so
 * the whole net trains on the wasm backend, which ships GEMM kernels and
 * their gradients but no native conv training kernels.  Down/up sampling is
 * space-to-depth / depth-to-space via reshape+transpose for the same reason.
 */
import {createRequire} from 'node:module';
import fs from 'node:fs';
import path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import {setWasmPaths} from '@tensorflow/tfjs-backend-wasm';
import {ConfigError, DataError} from './errors.js';
import {WINDOW_CHANNELS} from './protocol.js';

export type LossKind = 'bce' | 'dice' | 'bce+dice';

export interface ModelConfig {
  /** Input channels; must equal the 15 the wire protocol carries. */
  channels: number;
  baseWidth: number;
  /** Number of 2x down/up stages; downsampling factor is 2**depth. */
  depth: number;
  learningRate: number;
  batchSize: number;
  epochs: number;
  loss: LossKind;
  checkpointPath: string;
  seed: number;
}

export const MAX_PARAMS = 1_000_000;

export function defaultConfig(): ModelConfig {
  return {
    channels: WINDOW_CHANNELS,
    baseWidth: 8,
    depth: 2,
    learningRate: 2e-3,
    batchSize: 8,
    epochs: 3,
    loss: 'bce+dice',
    checkpointPath: 'model.json',
    seed: 0,
  };
}

const LOSS_KINDS: LossKind[] = ['bce', 'dice', 'bce+dice'];

export function validateConfig(cfg: ModelConfig): void {
  if (cfg.channels !== WINDOW_CHANNELS) {
    throw new ConfigError(
      `input channels are fixed at ${WINDOW_CHANNELS} (5 RGB frames), got ${cfg.channels}`);
  }
  if (!Number.isInteger(cfg.baseWidth) || cfg.baseWidth < 2 || cfg.baseWidth % 2 !== 0) {
    throw new ConfigError(`baseWidth must be an even integer >= 2, got ${cfg.baseWidth}`);
  }
  if (!Number.isInteger(cfg.depth) || cfg.depth < 1 || cfg.depth > 3) {
    throw new ConfigError(`depth must be 1..3, got ${cfg.depth}`);
  }
  if (!(cfg.learningRate > 0)) {
    throw new ConfigError(`learningRate must be > 0, got ${cfg.learningRate}`);
  }
  if (!Number.isInteger(cfg.batchSize) || cfg.batchSize < 1) {
    throw new ConfigError(`batchSize must be >= 1, got ${cfg.batchSize}`);
  }
  if (!Number.isInteger(cfg.epochs) || cfg.epochs < 1) {
    throw new ConfigError(`epochs must be >= 1, got ${cfg.epochs}`);
  }
  if (!LOSS_KINDS.includes(cfg.loss)) {
    throw new ConfigError(`loss must be one of ${LOSS_KINDS.join(', ')}, got ${cfg.loss}`);
  }
  if (!Number.isInteger(cfg.seed)) {
    throw new ConfigError(`seed must be an integer, got ${cfg.seed}`);
  }
  const params = paramCount(cfg);
  if (params > MAX_PARAMS) {
    throw new ConfigError(`${params} parameters exceeds the ${MAX_PARAMS} budget`);
  }
}

interface LayerSpec {
  name: string;
  taps: 1 | 9;
  ci: number;
  co: number;
}

/** Channel plan: stem, encoders, inception bottleneck, decoders, head. */
function layerSpecs(cfg: ModelConfig): LayerSpec[] {
  const w = cfg.baseWidth;
  const c = (d: number) => w * 2 ** d;   // width at pyramid level d
  const specs: LayerSpec[] = [{name: 'stem', taps: 9, ci: cfg.channels, co: w}];
  for (let d = 1; d <= cfg.depth; d++) {
    specs.push({name: `enc${d}`, taps: 9, ci: 4 * c(d - 1), co: c(d)});
  }
  const cb = c(cfg.depth);
  specs.push({name: 'bn1x1', taps: 1, ci: cb, co: cb / 2});
  specs.push({name: 'bn3x3', taps: 9, ci: cb, co: cb / 2});
  specs.push({name: 'bnmix', taps: 1, ci: cb, co: cb});
  for (let d = cfg.depth; d >= 1; d--) {
    specs.push({name: `dec${d}`, taps: 9, ci: c(d) / 4 + c(d - 1), co: c(d - 1)});
  }
  specs.push({name: 'head', taps: 1, ci: w, co: 1});
  return specs;
}

export function paramCount(cfg: ModelConfig): number {
  return layerSpecs(cfg).reduce((n, s) => n + s.taps * s.ci * s.co + s.co, 0);
}

// ------------------------------------------------------------------ backend

let backendReady: Promise<string> | null = null;

/** Pick the wasm backend (cpu fallback); idempotent, call before any op. */
export function initBackend(): Promise<string> {
  if (backendReady === null) {
    backendReady = (async () => {
      const require = createRequire(import.meta.url);
      try {
        const pkg = require.resolve('@tensorflow/tfjs-backend-wasm');
        setWasmPaths(path.dirname(pkg) + path.sep);
        if (await tf.setBackend('wasm')) {
          await tf.ready();
          return 'wasm';
        }
      } catch {
        // fall through to cpu
      }
      await tf.setBackend('cpu');
      await tf.ready();
      return 'cpu';
    })();
  }
  return backendReady;
}

// -------------------------------------------------------------------- model

function conv(x: tf.Tensor4D, kernel: tf.Variable, bias: tf.Variable,
              taps: number, co: number): tf.Tensor4D {
  const [b, h, w, ci] = x.shape;
  let flat: tf.Tensor2D;
  if (taps === 1) {
    flat = x.reshape([b * h * w, ci]);
  } else {
    const padded = tf.pad(x, [[0, 0], [1, 1], [1, 1], [0, 0]]);
    const shifts: tf.Tensor4D[] = [];
    for (let t = 0; t < 9; t++) {
      shifts.push(tf.slice(padded, [0, (t / 3) | 0, t % 3, 0], [b, h, w, ci]));
    }
    flat = tf.concat(shifts, 3).reshape([b * h * w, 9 * ci]);
  }
  const out = tf.add(tf.matMul(flat, kernel as unknown as tf.Tensor2D), bias);
  return out.reshape([b, h, w, co]);
}

function down2(x: tf.Tensor4D): tf.Tensor4D {
  const [b, h, w, c] = x.shape;
  return x.reshape([b, h / 2, 2, w / 2, 2, c])
          .transpose([0, 1, 3, 2, 4, 5])
          .reshape([b, h / 2, w / 2, 4 * c]);
}

function up2(x: tf.Tensor4D): tf.Tensor4D {
  const [b, h, w, c] = x.shape;
  return x.reshape([b, h, w, 2, 2, c / 4])
          .transpose([0, 1, 3, 2, 4, 5])
          .reshape([b, 2 * h, 2 * w, c / 4]);
}

interface CheckpointWeight {
  name: string;
  taps: number;
  ci: number;
  co: number;
  kernel: string;   // base64 little-endian float32
  bias: string;
}

interface Checkpoint {
  version: number;
  config: ModelConfig;
  weights: CheckpointWeight[];
}

function toB64(data: Float32Array): string {
  const buf = Buffer.allocUnsafe(data.length * 4);
  for (let i = 0; i < data.length; i++) buf.writeFloatLE(data[i], i * 4);
  return buf.toString('base64');
}

function fromB64(b64: string, count: number, what: string): Float32Array {
  const buf = Buffer.from(b64, 'base64');
  if (buf.length !== count * 4) {
    throw new DataError(`${what}: expected ${count * 4} bytes, got ${buf.length}`);
  }
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = buf.readFloatLE(i * 4);
  return out;
}

export class StreakNet {
  readonly config: ModelConfig;
  private specs: LayerSpec[];
  private kernels = new Map<string, tf.Variable>();
  private biases = new Map<string, tf.Variable>();

  constructor(config: ModelConfig, weights?: CheckpointWeight[]) {
    validateConfig(config);
    this.config = {...config};
    this.specs = layerSpecs(config);
    const byName = new Map((weights ?? []).map(w => [w.name, w]));
    let seed = config.seed;
    for (const layer of this.specs) {
      const fanIn = layer.taps * layer.ci;
      let kernel: tf.Tensor;
      let bias: tf.Tensor;
      if (weights) {
        const w = byName.get(layer.name);
        if (!w || w.taps !== layer.taps || w.ci !== layer.ci || w.co !== layer.co) {
          throw new DataError(`checkpoint is missing or misshapes layer ${layer.name}`);
        }
        kernel = tf.tensor2d(fromB64(w.kernel, fanIn * layer.co, layer.name), [fanIn, layer.co]);
        bias = tf.tensor1d(fromB64(w.bias, layer.co, `${layer.name} bias`));
      } else {
        kernel = tf.randomNormal([fanIn, layer.co], 0, Math.sqrt(2 / fanIn),
                                 'float32', seed++);
        bias = tf.zeros([layer.co]);
      }
      this.kernels.set(layer.name, tf.variable(kernel));
      this.biases.set(layer.name, tf.variable(bias));
      kernel.dispose();
      bias.dispose();
    }
  }

  paramCount(): number {
    return paramCount(this.config);
  }

  trainables(): tf.Variable[] {
    return [...this.kernels.values(), ...this.biases.values()];
  }

  private apply(name: string, x: tf.Tensor4D): tf.Tensor4D {
    const layer = this.specs.find(s => s.name === name)!;
    return conv(x, this.kernels.get(name)!, this.biases.get(name)!, layer.taps, layer.co);
  }

  /**
   * Logits for a batch; input H and W may be anything, padding to the next
   * multiple of 2**depth and cropping back is handled here.
   */
  forward(x: tf.Tensor4D): tf.Tensor4D {
    const [b, h, w, ci] = x.shape;
    if (ci !== this.config.channels) {
      throw new DataError(`input has ${ci} channels, model wants ${this.config.channels}`);
    }
    const f = 2 ** this.config.depth;
    const hp = Math.ceil(h / f) * f;
    const wp = Math.ceil(w / f) * f;
    let t: tf.Tensor4D = x;
    if (hp !== h || wp !== w) {
      t = tf.pad(x, [[0, 0], [0, hp - h], [0, wp - w], [0, 0]]);
    }

    const skips: tf.Tensor4D[] = [];
    let cur = tf.relu<tf.Tensor4D>(this.apply('stem', t));
    for (let d = 1; d <= this.config.depth; d++) {
      skips.push(cur);
      cur = tf.relu(this.apply(`enc${d}`, down2(cur)));
    }
    const b1 = tf.relu(this.apply('bn1x1', cur));
    const b3 = tf.relu(this.apply('bn3x3', cur));
    cur = tf.relu(this.apply('bnmix', tf.concat([b1, b3], 3)));
    for (let d = this.config.depth; d >= 1; d--) {
      cur = tf.relu(this.apply(`dec${d}`, tf.concat([up2(cur), skips[d - 1]], 3)));
    }
    let logits = this.apply('head', cur);
    if (hp !== h || wp !== w) {
      logits = tf.slice(logits, [0, 0, 0, 0], [b, h, w, 1]);
    }
    return logits;
  }

  /** Probability mask for one window; output length h*w, values in [0, 1]. */
  predictMask(window: Float32Array, h: number, w: number): Float32Array {
    if (window.length !== h * w * this.config.channels) {
      throw new DataError(
        `window must hold ${h * w * this.config.channels} floats, got ${window.length}`);
    }
    const probs = tf.tidy(() => {
      const x = tf.tensor4d(window, [1, h, w, this.config.channels]);
      return tf.sigmoid(this.forward(x)).dataSync() as Float32Array;
    });
    const out = new Float32Array(h * w);
    for (let i = 0; i < out.length; i++) {
      out[i] = Math.min(1, Math.max(0, probs[i]));
    }
    return out;
  }

  loss(logits: tf.Tensor4D, labels: tf.Tensor4D): tf.Scalar {
    return tf.tidy(() => {
      const parts: tf.Scalar[] = [];
      if (this.config.loss !== 'dice') {
        parts.push(tf.losses.sigmoidCrossEntropy(labels, logits));
      }
      if (this.config.loss !== 'bce') {
        const p = tf.sigmoid(logits);
        const inter = tf.sum(tf.mul(p, labels));
        const dice = tf.sub(1, tf.div(
          tf.add(tf.mul(inter, 2), 1),
          tf.add(tf.add(tf.sum(p), tf.sum(labels)), 1)));
        parts.push(dice as tf.Scalar);
      }
      return parts.length === 1 ? parts[0] : tf.add(parts[0], parts[1]);
    });
  }

  save(file: string): void {
    const weights: CheckpointWeight[] = this.specs.map(layer => ({
      name: layer.name,
      taps: layer.taps,
      ci: layer.ci,
      co: layer.co,
      kernel: toB64(this.kernels.get(layer.name)!.dataSync() as Float32Array),
      bias: toB64(this.biases.get(layer.name)!.dataSync() as Float32Array),
    }));
    const checkpoint: Checkpoint = {version: 1, config: this.config, weights};
    fs.mkdirSync(path.dirname(path.resolve(file)), {recursive: true});
    fs.writeFileSync(file, JSON.stringify(checkpoint) + '\n');
  }

  static load(file: string): StreakNet {
    if (!fs.existsSync(file)) throw new DataError(`no checkpoint at ${file}`);
    let checkpoint: Checkpoint;
    try {
      checkpoint = JSON.parse(fs.readFileSync(file, 'utf8'));
    } catch (err) {
      throw new DataError(`checkpoint ${file} is not valid JSON: ${(err as Error).message}`);
    }
    if (checkpoint.version !== 1 || !Array.isArray(checkpoint.weights)) {
      throw new DataError(`checkpoint ${file} has an unsupported layout`);
    }
    return new StreakNet(checkpoint.config, checkpoint.weights);
  }

  dispose(): void {
    for (const v of this.trainables()) v.dispose();
  }
}
