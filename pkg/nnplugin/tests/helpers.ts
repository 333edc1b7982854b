import {execFile, spawn, ChildProcess} from 'node:child_process';
import fs from 'node:fs';
import os from 'node:os';
import path from 'node:path';
import {fileURLToPath} from 'node:url';
import {promisify} from 'node:util';
import {
  StreamReader, bytesToFloats, packHello, packRequest, parseHello,
  parseResponseHeader,
} from '../src/protocol.js';

const execFileAsync = promisify(execFile);

export const REPO = path.resolve(path.dirname(fileURLToPath(import.meta.url)), '..');
export const CLI = path.join(REPO, 'dist', 'cli.js');

export function tmpdir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

/** Run the host pipeline CLI; throws on nonzero exit. */
export async function fmotrack(args: string[], cwd: string): Promise<string> {
  const {stdout} = await execFileAsync('fmotrack', args, {cwd});
  return stdout;
}

export interface EasyDatasetOptions {
  sequences: number;
  clipLen?: number;
  seed?: number;
}

/** Generate a small high-contrast dataset; returns the dataset root. */
export async function generateDataset(dir: string, o: EasyDatasetOptions): Promise<string> {
  const root = path.join(dir, 'data');
  await fmotrack([
    'generate', '--out', root, '--n-sequences', String(o.sequences),
    '--clip-len', String(o.clipLen ?? 10), '--size', '64', '96', '--easy',
    '--seed', String(o.seed ?? 17), '--jobs', '4',
  ], dir);
  return root;
}

/** Protocol client against a spawned server child, for driving tests. */
export class ClientDriver {
  readonly child: ChildProcess;
  private reader: StreamReader;
  readonly exit: Promise<number | null>;

  constructor(command: string, args: string[]) {
    this.child = spawn(command, args, {stdio: ['pipe', 'pipe', 'inherit']});
    this.reader = new StreamReader(this.child.stdout!);
    this.exit = new Promise(resolve => {
      this.child.on('exit', code => resolve(code));
    });
  }

  async hello(): Promise<number> {
    this.child.stdin!.write(packHello());
    const blob = await this.reader.read(8);
    if (blob === null) throw new Error('server closed before hello');
    return parseHello(blob);
  }

  async request(h: number, w: number, window: Float32Array): Promise<Float32Array> {
    this.child.stdin!.write(packRequest(h, w, window));
    const header = await this.reader.read(16);
    if (header === null) throw new Error('server closed before response');
    const parsed = parseResponseHeader(header);
    const payload = await this.reader.read(parsed.h * parsed.w * 4);
    if (payload === null) throw new Error('server closed mid-response');
    return bytesToFloats(payload, parsed.h * parsed.w);
  }

  async readRaw(n: number): Promise<Buffer | null> {
    return this.reader.read(n);
  }

  writeRaw(blob: Buffer): void {
    this.child.stdin!.write(blob);
  }

  end(): void {
    this.child.stdin!.end();
  }
}

export function parseCsv(file: string): Record<string, string>[] {
  const [head, ...rows] = fs.readFileSync(file, 'utf8').trim().split('\n');
  const cols = head.split(',');
  return rows.map(r => {
    const vals = r.split(',');
    return Object.fromEntries(cols.map((c, i) => [c, vals[i]]));
  });
}
