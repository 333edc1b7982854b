/** Training loop: shuffled mini-batches, Adam, per-epoch validation log. */
import * as tf from '@tensorflow/tfjs';
import {Sample, loadSamples, readManifest} from './dataset.js';
import {maskIoU} from './metrics.js';
import {initBackend, ModelConfig, StreakNet, validateConfig} from './model.js';
import {ConfigError} from './errors.js';

export interface EpochLog {
  epoch: number;
  /** Mean batch loss; null for the pre-training (epoch 0) entry. */
  trainLoss: number | null;
  valLoss: number;
  valIoU: number;
}

export interface FitOptions {
  /** Stop once validation IoU exceeds this (checked after each epoch). */
  earlyStopIoU?: number;
  log?: (line: string) => void;
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function shuffled<T>(items: T[], rand: () => number): T[] {
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}

function batchTensors(batch: Sample[]): {xs: tf.Tensor4D; ys: tf.Tensor4D} {
  const {h, w} = batch[0];
  const c = batch[0].window.length / (h * w);
  const xbuf = new Float32Array(batch.length * h * w * c);
  const ybuf = new Float32Array(batch.length * h * w);
  batch.forEach((s, i) => {
    xbuf.set(s.window, i * h * w * c);
    ybuf.set(s.gt, i * h * w);
  });
  return {
    xs: tf.tensor4d(xbuf, [batch.length, h, w, c]),
    ys: tf.tensor4d(ybuf, [batch.length, h, w, 1]),
  };
}

export interface EvalResult {
  loss: number;
  iou: number;
  perSample: number[];
}

/** Forward-only pass: mean loss and mean mask IoU (binarized at 0.5). */
export function evaluate(net: StreakNet, samples: Sample[], batchSize: number): EvalResult {
  const perSample: number[] = [];
  let lossSum = 0;
  let batches = 0;
  for (let at = 0; at < samples.length; at += batchSize) {
    const batch = samples.slice(at, at + batchSize);
    const {h, w} = batch[0];
    const probs = tf.tidy(() => {
      const {xs, ys} = batchTensors(batch);
      const logits = net.forward(xs);
      lossSum += net.loss(logits, ys).dataSync()[0];
      return tf.sigmoid(logits).dataSync() as Float32Array;
    });
    batches++;
    batch.forEach((s, i) => {
      perSample.push(maskIoU(probs.subarray(i * h * w, (i + 1) * h * w), s.gt));
    });
  }
  const iou = perSample.reduce((a, b) => a + b, 0) / perSample.length;
  return {loss: lossSum / batches, iou, perSample};
}

/** Train in place; history[0] is the untouched-model validation entry. */
export async function fit(net: StreakNet, train: Sample[], val: Sample[],
                          options: FitOptions = {}): Promise<EpochLog[]> {
  await initBackend();
  if (train.length === 0) throw new ConfigError('no training samples');
  if (val.length === 0) throw new ConfigError('no validation samples');
  const cfg = net.config;
  const log = options.log ?? (() => {});
  const rand = mulberry32(cfg.seed ^ 0x9e3779b9);
  const optimizer = tf.train.adam(cfg.learningRate);

  const history: EpochLog[] = [];
  const before = evaluate(net, val, cfg.batchSize);
  history.push({epoch: 0, trainLoss: null, valLoss: before.loss, valIoU: before.iou});
  log(`epoch 0: val ${before.loss.toFixed(4)} iou ${before.iou.toFixed(3)}`);

  const vars = net.trainables();
  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    const order = shuffled(train, rand);
    let lossSum = 0;
    let steps = 0;
    for (let at = 0; at < order.length; at += cfg.batchSize) {
      const batch = order.slice(at, at + cfg.batchSize);
      const {xs, ys} = batchTensors(batch);
      const cost = optimizer.minimize(() => net.loss(net.forward(xs), ys), true, vars);
      lossSum += cost!.dataSync()[0];
      cost!.dispose();
      xs.dispose();
      ys.dispose();
      steps++;
    }
    const trainLoss = lossSum / steps;
    const {loss: valLoss, iou: valIoU} = evaluate(net, val, cfg.batchSize);
    history.push({epoch, trainLoss, valLoss, valIoU});
    log(`epoch ${epoch}: train ${trainLoss.toFixed(4)} val ${valLoss.toFixed(4)} `
        + `iou ${valIoU.toFixed(3)}`);
    if (options.earlyStopIoU !== undefined && valIoU > options.earlyStopIoU) break;
  }
  optimizer.dispose();
  return history;
}

export interface TrainResult {
  net: StreakNet;
  history: EpochLog[];
  skipped: string[];
}

/**
 * End-to-end: read the dataset's own train/val split, train a fresh model,
 * save the checkpoint.  Corrupt samples are skipped and reported.
 */
export async function trainModel(root: string, config: ModelConfig,
                                 options: FitOptions = {}): Promise<TrainResult> {
  validateConfig(config);
  await initBackend();
  const manifest = readManifest(root);
  const log = options.log ?? (() => {});

  const trainLoad = loadSamples(root, manifest.splits.train);
  // Datasets generated without a val split still train: hold out every 5th.
  let valNames = manifest.splits.val;
  let trainSamples = trainLoad.samples;
  let valSamples: Sample[];
  let skipped = trainLoad.skipped;
  if (valNames.length > 0) {
    const valLoad = loadSamples(root, valNames);
    valSamples = valLoad.samples;
    skipped = skipped.concat(valLoad.skipped);
  } else {
    valSamples = trainSamples.filter((_, i) => i % 5 === 0);
    trainSamples = trainSamples.filter((_, i) => i % 5 !== 0);
  }
  if (skipped.length > 0) {
    log(`skipped ${skipped.length} corrupt sample(s): ${skipped.join(', ')}`);
  }

  const net = new StreakNet(config);
  const history = await fit(net, trainSamples, valSamples, {...options, log});
  net.save(config.checkpointPath);
  log(`checkpoint: ${config.checkpointPath}`);
  return {net, history, skipped};
}
