"""Protocol stub servers for exercising the external segmenter client.

Run as:  python3 stub_server.py MODE
Modes:
  constant:V      reply a uniform mask of value V
  echo-gt:DIR     reply gt.png files found under DIR (sorted), in request order
  bad-hello       reply a wrong hello magic
  garbage         handshake fine, then respond with a wrong magic
  wrong-size      respond with a halved mask
  out-of-range    respond with values above 1
  slow:SECONDS    sleep before each response
  flaky:PATH      crash on the first run (PATH absent), behave after restart
"""

import sys
import time
from pathlib import Path

import numpy as np

from fmotrack.segment import (
    MAGIC_RESPONSE,
    _U32,
    pack_hello,
    pack_response,
    parse_hello,
    parse_request_header,
    serve_forever,
)


def read_request(fin):
    header = fin.read(16)
    if not header:
        return None
    h, w, c = parse_request_header(header)
    payload = fin.read(h * w * c * 4)
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c)


def main():
    mode = sys.argv[1]
    fin, fout = sys.stdin.buffer, sys.stdout.buffer

    if mode == "bad-hello":
        fin.read(8)
        fout.write(b"NOPE" + _U32.pack(1))
        fout.flush()
        return

    if mode.startswith("flaky:"):
        sentinel = Path(mode.split(":", 1)[1])
        if not sentinel.exists():
            sentinel.touch()
            parse_hello(fin.read(8))
            fout.write(pack_hello())
            fout.flush()
            read_request(fin)
            sys.exit(3)  # die mid-request; client should restart us
        serve_forever(lambda win: np.full(win.shape[:2], 0.25, np.float32),
                      stdin=fin, stdout=fout)
        return

    if mode == "garbage":
        parse_hello(fin.read(8))
        fout.write(pack_hello())
        fout.flush()
        win = read_request(fin)
        fout.write(b"JUNK" + _U32.pack(win.shape[0]) + _U32.pack(win.shape[1])
                   + _U32.pack(1) + b"\x00" * (win.shape[0] * win.shape[1] * 4))
        fout.flush()
        read_request(fin)
        return

    if mode == "wrong-size":
        parse_hello(fin.read(8))
        fout.write(pack_hello())
        fout.flush()
        while True:
            win = read_request(fin)
            if win is None:
                return
            half = np.zeros((win.shape[0] // 2, win.shape[1] // 2), np.float32)
            fout.write(pack_response(half))
            fout.flush()

    if mode == "out-of-range":
        serve_forever(lambda win: np.full(win.shape[:2], 1.5, np.float32),
                      stdin=fin, stdout=fout)
        return

    if mode.startswith("slow:"):
        delay = float(mode.split(":", 1)[1])

        def slow_handler(win):
            time.sleep(delay)
            return np.zeros(win.shape[:2], np.float32)

        serve_forever(slow_handler, stdin=fin, stdout=fout)
        return

    if mode.startswith("constant:"):
        value = float(mode.split(":", 1)[1])
        serve_forever(lambda win: np.full(win.shape[:2], value, np.float32),
                      stdin=fin, stdout=fout)
        return

    if mode.startswith("echo-gt:"):
        root = Path(mode.split(":", 1)[1])
        from PIL import Image

        paths = sorted(root.rglob("gt.png"))
        state = {"i": 0}

        def echo_handler(win):
            with Image.open(paths[state["i"]]) as im:
                mask = np.asarray(im, dtype=np.float32) / 255.0
            state["i"] += 1
            return mask

        serve_forever(echo_handler, stdin=fin, stdout=fout)
        return

    raise SystemExit(f"unknown stub mode {mode!r}")


if __name__ == "__main__":
    main()
