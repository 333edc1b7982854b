"""Segmenters over 5-frame windows and the external-plugin protocol.

Two implementations of one contract: segment_window(frames) -> MaskPrediction.
The baseline is classical (median background subtraction + soft threshold +
morphology); the external client speaks a little-endian binary protocol to a
child process over stdin/stdout, one request in flight at a time.

Wire protocol (all integers little-endian u32):
  HELLO    magic b"FMOS", version=1            both directions at startup
  REQUEST  magic b"FMOW", H, W, C=15, then H*W*C float32 row-major
           channel-minor (5 RGB frames concatenated along channels)
  RESPONSE magic b"FMOM", H, W, C=1, then H*W float32 in [0,1]
Any other magic is a protocol error.
"""

import os
import select
import struct
import subprocess
import sys
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError, ProtocolError, ProtocolTimeout
from .validation import as_window

PROTOCOL_VERSION = 1
MAGIC_HELLO = b"FMOS"
MAGIC_REQUEST = b"FMOW"
MAGIC_RESPONSE = b"FMOM"
WINDOW_CHANNELS = 15

_U32 = struct.Struct("<I")


@dataclass
class MaskPrediction:
    prob: np.ndarray  # (H, W) float64 in [0, 1]
    frame_index: int


# ------------------------------------------------------------------ baseline

def _disc_footprint(radius):
    k = int(radius)
    yy, xx = np.mgrid[-k:k + 1, -k:k + 1]
    return (yy * yy + xx * xx) <= radius * radius


def baseline_segment(frames, threshold=0.25, morph_radius=1, min_area=4,
                     frame_index=2):
    """Median-background subtraction for the middle frame of a 5-window.

    prob = clamp((d - threshold) / threshold, 0, 1) where d is the maximum
    per-channel absolute difference between the middle frame and the
    per-pixel median of all 5; a grey open/close then area filtering clean
    up salt noise.
    """
    if not (0 < threshold < 1):
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    if min_area < 0:
        raise ConfigError(f"min_area must be >= 0, got {min_area}")
    window = as_window(frames)
    background = np.median(window, axis=0)
    d = np.abs(window[2] - background).max(axis=2)
    prob = np.clip((d - threshold) / threshold, 0.0, 1.0)
    if morph_radius > 0:
        foot = _disc_footprint(morph_radius)
        prob = ndimage.grey_opening(prob, footprint=foot)
        prob = ndimage.grey_closing(prob, footprint=foot)
    if min_area > 0:
        labels, n = ndimage.label(prob > 0, structure=np.ones((3, 3), bool))
        if n:
            areas = np.bincount(labels.ravel())
            small = np.nonzero(areas < min_area)[0]
            small = small[small > 0]
            if small.size:
                prob[np.isin(labels, small)] = 0.0
    return MaskPrediction(prob, frame_index)


class BaselineSegmenter(BaseEstimator):
    """Classical stand-in segmenter; no training, fit is a no-op."""

    def __init__(self, threshold=0.25, morph_radius=1, min_area=4):
        self.threshold = threshold
        self.morph_radius = morph_radius
        self.min_area = min_area

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def segment_window(self, frames, frame_index=2):
        return baseline_segment(frames, self.threshold, self.morph_radius,
                                self.min_area, frame_index)

    def predict(self, windows):
        """List of windows -> list of MaskPrediction (middle-frame masks)."""
        return [self.segment_window(w, frame_index=i + 2)
                for i, w in enumerate(windows)]

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


# ------------------------------------------------------------- wire protocol

def pack_hello():
    return MAGIC_HELLO + _U32.pack(PROTOCOL_VERSION)

def parse_hello(blob):
    if len(blob) != 8 or blob[:4] != MAGIC_HELLO:
        raise ProtocolError(f"bad hello magic: {blob[:4]!r}")
    version = _U32.unpack(blob[4:])[0]
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    return version


def pack_request(window):
    """window: (5, H, W, 3) float array -> request bytes (channel-minor)."""
    w = np.asarray(window)
    if w.ndim != 4 or w.shape[0] != 5 or w.shape[3] != 3:
        raise DataError(f"window must be (5, H, W, 3), got {w.shape}")
    H, W = w.shape[1], w.shape[2]
    stacked = np.concatenate(list(w), axis=2).astype("<f4")  # (H, W, 15)
    return (MAGIC_REQUEST + _U32.pack(H) + _U32.pack(W)
            + _U32.pack(WINDOW_CHANNELS) + stacked.tobytes(order="C"))


def parse_request_header(blob):
    if len(blob) != 16 or blob[:4] != MAGIC_REQUEST:
        raise ProtocolError(f"bad request magic: {blob[:4]!r}")
    h, w, c = struct.unpack("<III", blob[4:])
    if c != WINDOW_CHANNELS:
        raise ProtocolError(f"request must carry {WINDOW_CHANNELS} channels, got {c}")
    return h, w, c


def pack_response(mask):
    m = np.asarray(mask, dtype="<f4")
    if m.ndim != 2:
        raise DataError(f"response mask must be 2-D, got shape {m.shape}")
    return (MAGIC_RESPONSE + _U32.pack(m.shape[0]) + _U32.pack(m.shape[1])
            + _U32.pack(1) + m.tobytes(order="C"))


def parse_response_header(blob):
    if len(blob) != 16 or blob[:4] != MAGIC_RESPONSE:
        raise ProtocolError(f"bad response magic: {blob[:4]!r}")
    h, w, c = struct.unpack("<III", blob[4:])
    if c != 1:
        raise ProtocolError(f"response must carry 1 channel, got {c}")
    return h, w, c


def read_exact(fd, n, timeout):
    """Read exactly n bytes from a pipe fd, raising on EOF or deadline."""
    chunks = []
    got = 0
    deadline = time.monotonic() + timeout
    while got < n:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ProtocolTimeout(f"timed out waiting for {n - got} more bytes")
        ready, _, _ = select.select([fd], [], [], remaining)
        if not ready:
            continue
        chunk = os.read(fd, min(1 << 20, n - got))
        if not chunk:
            raise ProtocolError("child closed the stream mid-message")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def serve_forever(handler, stdin=None, stdout=None):
    """Minimal protocol server loop: handler(window (H,W,15) f32) -> mask.

    Used by test stubs; a real plugin implements the same byte sequence.
    Runs until EOF on stdin.
    """
    fin = stdin if stdin is not None else sys.stdin.buffer
    fout = stdout if stdout is not None else sys.stdout.buffer
    hello = fin.read(8)
    if len(hello) < 8:
        return
    parse_hello(hello)
    fout.write(pack_hello())
    fout.flush()
    while True:
        header = fin.read(16)
        if len(header) == 0:
            return
        h, w, c = parse_request_header(header)
        payload = fin.read(h * w * c * 4)
        window = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
        fout.write(pack_response(handler(window)))
        fout.flush()


# ------------------------------------------------------------ external kind

class ExternalSegmenter(BaseEstimator):
    """Client for a child-process segmenter speaking the wire protocol.

    One request in flight at a time; the child is restarted at most
    `max_restarts` times per run before errors propagate.
    """

    def __init__(self, command=None, timeout=10.0, max_restarts=2):
        self.command = command
        self.timeout = timeout
        self.max_restarts = max_restarts

    def fit(self, X=None, y=None):
        self._ensure_child()
        self.fitted_ = True
        return self

    # -- child management

    def _ensure_child(self):
        if getattr(self, "_child", None) is not None and self._child.poll() is None:
            return
        if not self.command:
            raise ConfigError("external segmenter needs a command to launch")
        cmd = self.command if isinstance(self.command, (list, tuple)) else [self.command]
        try:
            self._child = subprocess.Popen(
                list(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except FileNotFoundError as err:
            raise ConfigError(f"cannot launch segmenter: {err}")
        try:
            self._child.stdin.write(pack_hello())
            self._child.stdin.flush()
            reply = read_exact(self._child.stdout.fileno(), 8, self.timeout)
            parse_hello(reply)
        except ProtocolError:
            self._kill_child()
            raise
        except (BrokenPipeError, OSError) as err:
            self._kill_child()
            raise ProtocolError(f"handshake failed: {err}")

    def _kill_child(self):
        child = getattr(self, "_child", None)
        if child is not None and child.poll() is None:
            child.kill()
            child.wait()
        self._child = None

    def close(self):
        child = getattr(self, "_child", None)
        if child is not None:
            if child.poll() is None:
                try:
                    child.stdin.close()
                except OSError:
                    pass
                try:
                    child.wait(timeout=2)
                except subprocess.TimeoutExpired:
                    child.kill()
                    child.wait()
            self._child = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- the contract

    def _roundtrip(self, request, shape, frame_index):
        self._ensure_child()
        H, W = shape
        try:
            self._child.stdin.write(request)
            self._child.stdin.flush()
            fd = self._child.stdout.fileno()
            header = read_exact(fd, 16, self.timeout)
            h, w, _ = parse_response_header(header)
            if (h, w) != (H, W):
                raise ProtocolError(
                    f"frame {frame_index}: response is {h}x{w}, window is {H}x{W}")
            payload = read_exact(fd, h * w * 4, self.timeout)
        except BrokenPipeError as err:
            raise ProtocolError(f"frame {frame_index}: child died mid-request ({err})")
        mask = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(H, W)
        if not np.isfinite(mask).all() or mask.min() < 0 or mask.max() > 1:
            raise ProtocolError(
                f"frame {frame_index}: mask values outside [0,1] "
                f"(min {mask.min():g}, max {mask.max():g})")
        return MaskPrediction(mask, frame_index)

    def segment_window(self, frames, frame_index=2):
        window = as_window(frames)
        request = pack_request(window)
        restarts = 0
        while True:
            try:
                return self._roundtrip(request, window.shape[1:3], frame_index)
            except ProtocolError:
                self._kill_child()
                if restarts >= self.max_restarts:
                    raise
                restarts += 1

    def predict(self, windows):
        return [self.segment_window(w, frame_index=i + 2)
                for i, w in enumerate(windows)]


def make_segmenter(kind, **params):
    """Factory: kind 'baseline' or 'external' plus keyword params."""
    if kind == "baseline":
        return BaselineSegmenter(**params)
    if kind == "external":
        return ExternalSegmenter(**params)
    raise ConfigError(f"unknown segmenter kind {kind!r}")
