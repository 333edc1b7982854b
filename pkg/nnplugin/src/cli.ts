#!/usr/bin/env node
/**
 * Subcommands: train, serve, stub, eval.  Exit codes follow the host CLI's
 * convention: 0 ok, 1 usage/config, 2 data, 3 protocol.
 */
import {parseArgs} from 'node:util';
import {ConfigError, DataError, ProtocolError} from './errors.js';

const USAGE = `usage: nnplugin <command> [options]

commands:
  train --dataset DIR [--out FILE] [--epochs N] [--batch-size N]
        [--base-width N] [--depth N] [--lr X] [--loss bce|dice|bce+dice]
        [--seed N]
  serve --model FILE
  stub --dataset DIR
  eval --dataset DIR --model FILE [--split val|train|all] [--masks DIR]
`;

/** tf's cpu path chats on stdout; keep that off the protocol stream. */
function consoleToStderr(): void {
  for (const name of ['log', 'info', 'warn'] as const) {
    console[name] = (...args: unknown[]) => {
      process.stderr.write(args.map(String).join(' ') + '\n');
    };
  }
}

function intFlag(value: string | undefined, name: string): number | undefined {
  if (value === undefined) return undefined;
  const n = Number(value);
  if (!Number.isInteger(n)) throw new ConfigError(`--${name} must be an integer, got ${value}`);
  return n;
}

async function cmdTrain(argv: string[]): Promise<number> {
  const {values} = parseArgs({
    args: argv,
    options: {
      dataset: {type: 'string'},
      out: {type: 'string', default: 'model.json'},
      epochs: {type: 'string'},
      'batch-size': {type: 'string'},
      'base-width': {type: 'string'},
      depth: {type: 'string'},
      lr: {type: 'string'},
      loss: {type: 'string'},
      seed: {type: 'string'},
    },
  });
  if (!values.dataset) throw new ConfigError('train needs --dataset');
  const {defaultConfig} = await import('./model.js');
  const {trainModel} = await import('./train.js');
  const cfg = defaultConfig();
  cfg.checkpointPath = values.out!;
  cfg.epochs = intFlag(values.epochs, 'epochs') ?? cfg.epochs;
  cfg.batchSize = intFlag(values['batch-size'], 'batch-size') ?? cfg.batchSize;
  cfg.baseWidth = intFlag(values['base-width'], 'base-width') ?? cfg.baseWidth;
  cfg.depth = intFlag(values.depth, 'depth') ?? cfg.depth;
  cfg.seed = intFlag(values.seed, 'seed') ?? cfg.seed;
  if (values.lr !== undefined) {
    const lr = Number(values.lr);
    if (!(lr > 0)) throw new ConfigError(`--lr must be > 0, got ${values.lr}`);
    cfg.learningRate = lr;
  }
  if (values.loss !== undefined) cfg.loss = values.loss as typeof cfg.loss;

  const result = await trainModel(values.dataset, cfg, {log: line => console.log(line)});
  result.net.dispose();
  return 0;
}

async function cmdServe(argv: string[]): Promise<number> {
  const {values} = parseArgs({args: argv, options: {model: {type: 'string'}}});
  if (!values.model) throw new ConfigError('serve needs --model');
  consoleToStderr();
  const {initBackend, StreakNet} = await import('./model.js');
  await initBackend();
  const net = StreakNet.load(values.model);
  const {runServe} = await import('./serve.js');
  return runServe(net, process.stdin, process.stdout);
}

async function cmdStub(argv: string[]): Promise<number> {
  const {values} = parseArgs({args: argv, options: {dataset: {type: 'string'}}});
  if (!values.dataset) throw new ConfigError('stub needs --dataset');
  consoleToStderr();
  const {runStub} = await import('./serve.js');
  return runStub(values.dataset, process.stdin, process.stdout);
}

async function cmdEval(argv: string[]): Promise<number> {
  const {values} = parseArgs({
    args: argv,
    options: {
      dataset: {type: 'string'},
      model: {type: 'string'},
      split: {type: 'string', default: 'val'},
      masks: {type: 'string'},
    },
  });
  if (!values.dataset || !values.model) throw new ConfigError('eval needs --dataset and --model');
  if (!['val', 'train', 'all'].includes(values.split!)) {
    throw new ConfigError(`--split must be val, train or all, got ${values.split}`);
  }
  const {initBackend, StreakNet} = await import('./model.js');
  const {evaluate} = await import('./train.js');
  const {loadSamples, readManifest, readNpy} = await import('./dataset.js');
  const {maskIoU} = await import('./metrics.js');

  await initBackend();
  const manifest = readManifest(values.dataset);
  const names = values.split === 'all'
    ? [...manifest.splits.train, ...manifest.splits.val].sort()
    : manifest.splits[values.split as 'train' | 'val'];
  if (names.length === 0) throw new DataError(`split ${values.split} is empty`);
  const {samples, skipped} = loadSamples(values.dataset, names);
  if (skipped.length > 0) console.log(`skipped ${skipped.length} corrupt sample(s)`);

  const net = StreakNet.load(values.model);
  const {iou} = evaluate(net, samples, net.config.batchSize);
  console.log(`model mean IoU: ${iou.toFixed(4)} (${samples.length} samples)`);
  net.dispose();

  if (values.masks) {
    let sum = 0;
    for (const s of samples) {
      const {shape, data} = readNpy(`${values.masks}/${s.name}.npy`);
      if (shape[0] !== s.h || shape[1] !== s.w) {
        throw new DataError(`${s.name}.npy is ${shape.join('x')}, sample is ${s.h}x${s.w}`);
      }
      sum += maskIoU(data, s.gt);
    }
    console.log(`baseline mean IoU: ${(sum / samples.length).toFixed(4)}`);
  }
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case 'train': return await cmdTrain(rest);
      case 'serve': return await cmdServe(rest);
      case 'stub': return await cmdStub(rest);
      case 'eval': return await cmdEval(rest);
      case '--help':
      case 'help':
      case undefined:
        process.stdout.write(USAGE);
        return command === undefined ? 1 : 0;
      default:
        throw new ConfigError(`unknown command: ${command}`);
    }
  } catch (err) {
    if (err instanceof ProtocolError) {
      process.stderr.write(`protocol error: ${err.message}\n`);
      return 3;
    }
    if (err instanceof DataError) {
      process.stderr.write(`data error: ${err.message}\n`);
      return 2;
    }
    if (err instanceof ConfigError) {
      process.stderr.write(`usage error: ${err.message}\n${USAGE}`);
      return 1;
    }
    // parseArgs throws plain TypeError/Error subclasses with ERR_PARSE_ARGS codes
    if (err instanceof Error && (err as NodeJS.ErrnoException).code?.startsWith('ERR_PARSE_ARGS')) {
      process.stderr.write(`usage error: ${err.message}\n${USAGE}`);
      return 1;
    }
    throw err;
  }
}

const entry = process.argv[1];
if (entry && (entry.endsWith('cli.js') || entry.endsWith('nnplugin'))) {
  main(process.argv.slice(2)).then(code => {
    process.exitCode = code;
  });
}
