"""Single-object tracking over per-frame probability masks.

Per frame: binarize, split into 8-connected blobs, score each by size and
elongation, gate candidates around the Kalman prediction, measure or
predict.  Moments use one exact integer numerator per value so results are
the correctly rounded rationals, bit-stable across platforms.
"""

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError, NumericalError

ELONGATION_EPS = 1e-6


@dataclass
class Blob:
    pixels: np.ndarray  # (N, 2) int array of (y, x)
    area: int
    centroid: tuple  # (x, y)
    mu20: float
    mu02: float
    mu11: float
    lambda1: float
    lambda2: float
    elongation: float
    bbox: tuple  # (x, y, w, h)

    @property
    def length(self):
        """Streak length estimate: a uniform line of length L has
        variance L^2 / 12 along its axis."""
        return float(np.sqrt(12.0 * self.lambda1))


def _central_moments(ys, xs):
    """(mu20, mu02, mu11) as correctly rounded rationals.

    Each moment is (N*Sab - Sa*Sb) / N^2 with integer numerator, so the
    single final division is the only rounding step.
    """
    n = int(ys.size)
    sx = int(xs.sum(dtype=np.int64))
    sy = int(ys.sum(dtype=np.int64))
    sxx = int((xs.astype(np.int64) ** 2).sum())
    syy = int((ys.astype(np.int64) ** 2).sum())
    sxy = int((xs.astype(np.int64) * ys.astype(np.int64)).sum())
    nn = n * n
    return ((n * sxx - sx * sx) / nn,
            (n * syy - sy * sy) / nn,
            (n * sxy - sx * sy) / nn)


def connected_components(mask):
    """8-connected blobs of a binary mask with exact moment statistics."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DataError(f"mask must be 2-D, got shape {m.shape}")
    binary = m > 0.5 if m.dtype != bool else m
    labels, count = ndimage.label(binary, structure=np.ones((3, 3), bool))
    blobs = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        sub = labels[sl] == idx
        ys, xs = np.nonzero(sub)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        n = ys.size
        mu20, mu02, mu11 = _central_moments(ys, xs)
        mean = 0.5 * (mu20 + mu02)
        half = np.hypot(0.5 * (mu20 - mu02), mu11)
        lam1 = mean + half
        lam2 = max(0.0, mean - half)
        elong = 1.0 - (lam2 + ELONGATION_EPS) / (lam1 + ELONGATION_EPS)
        bbox = (int(xs.min()), int(ys.min()),
                int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        blobs.append(Blob(np.stack([ys, xs], axis=1), int(n),
                          (float(xs.sum()) / n, float(ys.sum()) / n),
                          mu20, mu02, mu11, lam1, lam2, elong, bbox))
    return blobs


def _check_weights(weights):
    w_a, w_e = weights
    if w_a < 0 or w_e < 0 or abs(w_a + w_e - 1.0) > 1e-9:
        raise ConfigError(f"weights must be nonnegative and sum to 1, got {weights}")
    return w_a, w_e


def score_blobs(blobs, weights=(0.5, 0.5)):
    """Scores in [0, 1]: w_a * (area / max area) + w_e * elongation."""
    w_a, w_e = _check_weights(weights)
    if not blobs:
        return np.empty(0)
    max_area = max(b.area for b in blobs)
    return np.array([w_a * (b.area / max_area) + w_e * b.elongation
                     for b in blobs])


def score_blob(blob, all_blobs, weights=(0.5, 0.5)):
    if not all_blobs:
        raise DataError("cannot score against an empty blob list")
    w_a, w_e = _check_weights(weights)
    max_area = max(b.area for b in all_blobs)
    return w_a * (blob.area / max_area) + w_e * blob.elongation


# ------------------------------------------------------------------- kalman

_F = np.array([[1.0, 0, 1, 0],
               [0, 1, 0, 1],
               [0, 0, 1, 0],
               [0, 0, 0, 1]])
_H = np.array([[1.0, 0, 0, 0],
               [0, 1.0, 0, 0]])
# Discrete white-noise acceleration, unit frame step.
_Q_UNIT = np.array([[0.25, 0, 0.5, 0],
                    [0, 0.25, 0, 0.5],
                    [0.5, 0, 1.0, 0],
                    [0, 0.5, 0, 1.0]])


@dataclass
class KalmanState:
    x: np.ndarray  # [px, py, vx, vy]
    P: np.ndarray  # 4x4 SPD
    q: float = 1.0
    r: float = 1.0


def _ensure_spd(P):
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
        return P
    except np.linalg.LinAlgError:
        jitter = max(1e-12, 1e-12 * abs(np.trace(P)))
        try:
            np.linalg.cholesky(P + jitter * np.eye(4))
            return P + jitter * np.eye(4)
        except np.linalg.LinAlgError:
            raise NumericalError("covariance lost positive definiteness")


def kalman_init(pos, vel, q=1.0, r=1.0):
    if r <= 0:
        raise ConfigError(f"measurement noise r must be > 0, got {r}")
    if q < 0:
        raise ConfigError(f"process noise q must be >= 0, got {q}")
    x = np.array([pos[0], pos[1], vel[0], vel[1]], dtype=np.float64)
    # Velocity seeded from a difference of two measurements: var 2r + q.
    P = np.diag([r, r, 2 * r + q, 2 * r + q]).astype(np.float64)
    return KalmanState(x, P, float(q), float(r))


def kalman_predict(state):
    x = _F @ state.x
    P = _ensure_spd(_F @ state.P @ _F.T + state.q * _Q_UNIT)
    return KalmanState(x, P, state.q, state.r)


def kalman_update(state, measurement):
    z = np.asarray(measurement, dtype=np.float64)
    R = state.r * np.eye(2)
    innov = z - _H @ state.x
    S = _H @ state.P @ _H.T + R
    K = state.P @ _H.T @ np.linalg.inv(S)
    x = state.x + K @ innov
    ikh = np.eye(4) - K @ _H
    P = _ensure_spd(ikh @ state.P @ ikh.T + K @ R @ K.T)  # Joseph form
    return KalmanState(x, P, state.q, state.r)


# -------------------------------------------------------------------- track

class TrackStatus(str, Enum):
    MEASURED = "Measured"
    PREDICTED = "Predicted"
    LOST = "Lost"


@dataclass
class TrackEntry:
    frame: int
    status: TrackStatus
    bbox: tuple  # (x, y, w, h)
    score: float

    def to_json(self):
        return {"frame": int(self.frame), "status": self.status.value,
                "bbox": [int(v) for v in self.bbox], "score": float(self.score)}


@dataclass
class Track:
    entries: list

    def statuses(self):
        return [e.status for e in self.entries]

    def to_jsonl(self):
        return "".join(json.dumps(e.to_json()) + "\n" for e in self.entries)


def write_track_jsonl(track, path):
    with open(path, "w") as fh:
        fh.write(track.to_jsonl())


def read_track_jsonl(path):
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            entries.append(TrackEntry(rec["frame"], TrackStatus(rec["status"]),
                                      tuple(rec["bbox"]), rec["score"]))
    return Track(entries)


@dataclass
class TrackerParams:
    binarize_threshold: float = 0.25
    w_area: float = 0.5
    w_elong: float = 0.5
    gate_factor: float = 3.0
    gate_min: float = 8.0
    max_gap: int = 5
    q: float = 1.0
    r: float = 1.0

    def validate(self):
        if not (0 < self.binarize_threshold < 1):
            raise ConfigError(
                f"binarize_threshold must be in (0,1), got {self.binarize_threshold}")
        _check_weights((self.w_area, self.w_elong))
        if self.gate_factor <= 0 or self.gate_min < 0:
            raise ConfigError("gate_factor must be > 0 and gate_min >= 0")
        if self.max_gap < 0:
            raise ConfigError(f"max_gap must be >= 0, got {self.max_gap}")
        if self.r <= 0 or self.q < 0:
            raise ConfigError("need r > 0 and q >= 0")


def _clamped_bbox(cx, cy, w, h, H, W):
    w = min(int(w), W)
    h = min(int(h), H)
    x = int(round(cx - w / 2.0))
    y = int(round(cy - h / 2.0))
    x = min(max(x, 0), W - w)
    y = min(max(y, 0), H - h)
    return (x, y, w, h)


def track_sequence(masks, params=None):
    """Fold per-frame masks into one track with gap bridging.

    The filter needs two consecutive detections to seed velocity; until
    then accepted blobs are still emitted as Measured.  A gap longer than
    max_gap drops the filter; re-detection restarts the two-frame seed.
    """
    params = params if params is not None else TrackerParams()
    params.validate()
    if not masks:
        return Track([])
    H, W = masks[0].prob.shape
    weights = (params.w_area, params.w_elong)

    entries = []
    filt = None
    pending = None  # (frame, centroid) awaiting its consecutive partner
    last_size = None  # (w, h) of the last measured bbox
    last_len = None
    gap = 0

    for t, mp in enumerate(masks):
        if mp.prob.shape != (H, W):
            raise DataError(f"mask {t} is {mp.prob.shape}, expected {(H, W)}")
        blobs = connected_components(mp.prob > params.binarize_threshold)
        scores = score_blobs(blobs, weights)

        def accept(blob, score):
            nonlocal filt, pending, last_size, last_len, gap
            cx, cy = blob.centroid
            if filt is None:
                if pending is not None and pending[0] == t - 1:
                    px, py = pending[1]
                    filt = kalman_init((cx, cy), (cx - px, cy - py),
                                       params.q, params.r)
                pending = (t, (cx, cy))
            else:
                filt = kalman_update(filt, (cx, cy))
            gap = 0
            last_size = (blob.bbox[2], blob.bbox[3])
            last_len = blob.length
            entries.append(TrackEntry(t, TrackStatus.MEASURED, blob.bbox, score))

        if filt is not None:
            filt = kalman_predict(filt)
            gate = max(params.gate_factor * (last_len or 0.0), params.gate_min)
            px, py = filt.x[0], filt.x[1]
            in_gate = [i for i, b in enumerate(blobs)
                       if np.hypot(b.centroid[0] - px, b.centroid[1] - py) <= gate]
            if in_gate:
                best = max(in_gate, key=lambda i: scores[i])
                accept(blobs[best], float(scores[best]))
                continue
            gap += 1
            if gap <= params.max_gap:
                w, h = last_size
                entries.append(TrackEntry(t, TrackStatus.PREDICTED,
                                          _clamped_bbox(px, py, w, h, H, W), 0.0))
                continue
            filt = None  # lost; fall through to fresh detection
            pending = None

        if blobs:
            best = int(np.argmax(scores))
            accept(blobs[best], float(scores[best]))
        else:
            pending = None
            entries.append(TrackEntry(t, TrackStatus.LOST, (0, 0, 0, 0), 0.0))

    return Track(entries)


class StreakTracker(BaseEstimator):
    """Estimator wrapper around track_sequence with flat parameters."""

    def __init__(self, binarize_threshold=0.25, w_area=0.5, w_elong=0.5,
                 gate_factor=3.0, gate_min=8.0, max_gap=5, q=1.0, r=1.0):
        self.binarize_threshold = binarize_threshold
        self.w_area = w_area
        self.w_elong = w_elong
        self.gate_factor = gate_factor
        self.gate_min = gate_min
        self.max_gap = max_gap
        self.q = q
        self.r = r

    def _params(self):
        return TrackerParams(self.binarize_threshold, self.w_area, self.w_elong,
                             self.gate_factor, self.gate_min, self.max_gap,
                             self.q, self.r)

    def fit(self, X=None, y=None):
        self._params().validate()
        self.fitted_ = True
        return self

    def predict(self, masks):
        return track_sequence(masks, self._params())
