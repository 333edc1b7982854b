/**
 * Binary segmenter protocol over stdin/stdout, all integers little-endian.
 *
 *   HELLO    "FMOS" + u32 version      both directions at startup
 *   REQUEST  "FMOW" + u32 H, W, C=15   then H*W*C float32, row-major,
 *                                      channel-minor (5 RGB frames stacked)
 *   RESPONSE "FMOM" + u32 H, W, C=1    then H*W float32 in [0, 1]
 *
 * On a malformed inbound frame the server emits one "FMOE" + u32 length +
 * utf-8 message frame before exiting; clients treat any unknown magic as a
 * protocol error, so the error frame doubles as a readable diagnostic.
 */
import type {Readable} from 'node:stream';
import {ProtocolError} from './errors.js';

export const PROTOCOL_VERSION = 1;
export const WINDOW_CHANNELS = 15;
export const MAGIC_HELLO = 'FMOS';
export const MAGIC_REQUEST = 'FMOW';
export const MAGIC_RESPONSE = 'FMOM';
export const MAGIC_ERROR = 'FMOE';

function u32(value: number): Buffer {
  const b = Buffer.allocUnsafe(4);
  b.writeUInt32LE(value >>> 0, 0);
  return b;
}

export function packHello(): Buffer {
  return Buffer.concat([Buffer.from(MAGIC_HELLO, 'ascii'), u32(PROTOCOL_VERSION)]);
}

export function parseHello(blob: Buffer): number {
  if (blob.length !== 8 || blob.toString('ascii', 0, 4) !== MAGIC_HELLO) {
    throw new ProtocolError(`bad hello magic: ${blob.subarray(0, 4).toString('ascii')}`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${version}`);
  }
  return version;
}

export function packRequest(h: number, w: number, window: Float32Array): Buffer {
  if (window.length !== h * w * WINDOW_CHANNELS) {
    throw new ProtocolError(
      `request payload must hold ${h * w * WINDOW_CHANNELS} floats, got ${window.length}`);
  }
  const head = Buffer.concat([
    Buffer.from(MAGIC_REQUEST, 'ascii'), u32(h), u32(w), u32(WINDOW_CHANNELS),
  ]);
  return Buffer.concat([head, floatsToBytes(window)]);
}

export interface FrameHeader {
  h: number;
  w: number;
  c: number;
}

export function parseRequestHeader(blob: Buffer): FrameHeader {
  if (blob.length !== 16 || blob.toString('ascii', 0, 4) !== MAGIC_REQUEST) {
    throw new ProtocolError(`bad request magic: ${blob.subarray(0, 4).toString('ascii')}`);
  }
  const h = blob.readUInt32LE(4);
  const w = blob.readUInt32LE(8);
  const c = blob.readUInt32LE(12);
  if (c !== WINDOW_CHANNELS) {
    throw new ProtocolError(`request must carry ${WINDOW_CHANNELS} channels, got ${c}`);
  }
  return {h, w, c};
}

export function packResponse(h: number, w: number, mask: Float32Array): Buffer {
  if (mask.length !== h * w) {
    throw new ProtocolError(`response mask must hold ${h * w} floats, got ${mask.length}`);
  }
  const head = Buffer.concat([
    Buffer.from(MAGIC_RESPONSE, 'ascii'), u32(h), u32(w), u32(1),
  ]);
  return Buffer.concat([head, floatsToBytes(mask)]);
}

export function parseResponseHeader(blob: Buffer): FrameHeader {
  if (blob.length !== 16 || blob.toString('ascii', 0, 4) !== MAGIC_RESPONSE) {
    throw new ProtocolError(`bad response magic: ${blob.subarray(0, 4).toString('ascii')}`);
  }
  const h = blob.readUInt32LE(4);
  const w = blob.readUInt32LE(8);
  const c = blob.readUInt32LE(12);
  if (c !== 1) {
    throw new ProtocolError(`response must carry 1 channel, got ${c}`);
  }
  return {h, w, c};
}

export function packError(message: string): Buffer {
  const body = Buffer.from(message, 'utf8');
  return Buffer.concat([Buffer.from(MAGIC_ERROR, 'ascii'), u32(body.length), body]);
}

/** Serialize as little-endian float32 regardless of host byte order. */
export function floatsToBytes(values: Float32Array): Buffer {
  const out = Buffer.allocUnsafe(values.length * 4);
  for (let i = 0; i < values.length; i++) out.writeFloatLE(values[i], i * 4);
  return out;
}

export function bytesToFloats(blob: Buffer, count: number): Float32Array {
  if (blob.length < count * 4) {
    throw new ProtocolError(`payload too short: ${blob.length} bytes for ${count} floats`);
  }
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = blob.readFloatLE(i * 4);
  return out;
}

/**
 * Pull-based reader over a stream: read(n) resolves with exactly n bytes,
 * or null on a clean EOF at a frame boundary (0 bytes buffered).  EOF in the
 * middle of a frame is a protocol error.
 */
export class StreamReader {
  private chunks: Buffer[] = [];
  private buffered = 0;
  private ended = false;
  private wake: (() => void) | null = null;

  constructor(stream: Readable) {
    stream.on('data', (chunk: Buffer) => {
      this.chunks.push(chunk);
      this.buffered += chunk.length;
      this.wake?.();
    });
    stream.on('end', () => {
      this.ended = true;
      this.wake?.();
    });
    stream.on('error', () => {
      this.ended = true;
      this.wake?.();
    });
  }

  async read(n: number): Promise<Buffer | null> {
    while (this.buffered < n) {
      if (this.ended) {
        if (this.buffered === 0) return null;
        throw new ProtocolError(
          `stream closed mid-message (${this.buffered} of ${n} bytes)`);
      }
      await new Promise<void>(resolve => {
        this.wake = resolve;
      });
      this.wake = null;
    }
    const all = Buffer.concat(this.chunks);
    const head = all.subarray(0, n);
    const rest = all.subarray(n);
    this.chunks = rest.length ? [rest] : [];
    this.buffered = rest.length;
    return head;
  }
}
