/** Protocol server loops: the model server and the echo-GT test stub. */
import type {Readable, Writable} from 'node:stream';
import {once} from 'node:events';
import {readGtMask, sortedGtPaths} from './dataset.js';
import {ProtocolError} from './errors.js';
import type {StreakNet} from './model.js';
import {
  StreamReader, WINDOW_CHANNELS, bytesToFloats, packError, packHello,
  packResponse, parseHello, parseRequestHeader,
} from './protocol.js';

export interface MaskReply {
  h: number;
  w: number;
  mask: Float32Array;
}

export type WindowHandler = (h: number, w: number, window: Float32Array) => MaskReply;

async function write(stream: Writable, blob: Buffer): Promise<void> {
  if (!stream.write(blob)) await once(stream, 'drain');
}

/**
 * Run the request loop until EOF.  Returns the process exit code: 0 for a
 * clean shutdown, 3 after a malformed inbound frame (an error frame is sent
 * before giving up so the peer sees more than a dead pipe).
 */
export async function serveLoop(handler: WindowHandler, stdin: Readable,
                                stdout: Writable): Promise<number> {
  const reader = new StreamReader(stdin);
  try {
    const hello = await reader.read(8);
    if (hello === null) return 0;
    parseHello(hello);
    await write(stdout, packHello());
    for (;;) {
      const header = await reader.read(16);
      if (header === null) return 0;
      const {h, w} = parseRequestHeader(header);
      const payload = await reader.read(h * w * WINDOW_CHANNELS * 4);
      if (payload === null) {
        throw new ProtocolError('stream closed before the request payload');
      }
      const reply = handler(h, w, bytesToFloats(payload, h * w * WINDOW_CHANNELS));
      await write(stdout, packResponse(reply.h, reply.w, reply.mask));
    }
  } catch (err) {
    if (err instanceof ProtocolError) {
      process.stderr.write(`protocol error: ${err.message}\n`);
      await write(stdout, packError(err.message)).catch(() => {});
      return 3;
    }
    throw err;
  } finally {
    // The reader's listener would otherwise pin the event loop until the
    // peer closes its end, stalling shutdown after an error bail-out.
    stdin.destroy();
  }
}

export function runServe(net: StreakNet, stdin: Readable, stdout: Writable): Promise<number> {
  return serveLoop((h, w, window) => ({h, w, mask: net.predictMask(window, h, w)}),
                   stdin, stdout);
}

/**
 * Echo stub: ignores the pixels and answers with the dataset's gt.png files
 * in sorted path order, one per request; that is the order the segment stage sends
 * windows in.
 */
export function runStub(datasetRoot: string, stdin: Readable,
                        stdout: Writable): Promise<number> {
  const paths = sortedGtPaths(datasetRoot);
  let at = 0;
  return serveLoop(() => {
    if (at >= paths.length) {
      throw new ProtocolError(`more requests than gt masks (${paths.length})`);
    }
    const {h, w, mask} = readGtMask(paths[at++]);
    return {h, w, mask};
  }, stdin, stdout);
}
