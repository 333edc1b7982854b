"""Input validation helpers used at the public API boundaries.

Images are plain numpy arrays: float64 (H, W) for single channel or
(H, W, 3) for RGB, values in [0, 1].
"""

import numpy as np

from .errors import DataError


def as_image(arr, channels=None, name="image"):
    """Coerce to a float64 image array and validate range/shape.

    channels: None (accept 1 or 3), 1 (require (H, W)) or 3 (require (H, W, 3)).
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        ch = 1
    elif a.ndim == 3 and a.shape[2] == 3:
        ch = 3
    else:
        raise DataError(f"{name}: expected (H, W) or (H, W, 3), got shape {a.shape}")
    if channels is not None and ch != channels:
        raise DataError(f"{name}: expected {channels} channel(s), got {ch}")
    if a.size and (np.min(a) < -1e-9 or np.max(a) > 1 + 1e-9):
        raise DataError(f"{name}: values outside [0, 1] (min {np.min(a):g}, max {np.max(a):g})")
    return np.clip(a, 0.0, 1.0)


def as_window(frames, name="window"):
    """Validate a 5-frame RGB window; returns an array of shape (5, H, W, 3)."""
    frames = [as_image(f, channels=3, name=f"{name}[{i}]") for i, f in enumerate(frames)]
    if len(frames) != 5:
        raise DataError(f"{name}: expected 5 frames, got {len(frames)}")
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise DataError(f"{name}: frame {i} has shape {f.shape}, expected {shape}")
    return np.stack(frames, axis=0)


def as_binary_mask(mask, name="mask"):
    """Coerce to a boolean (H, W) mask; nonzero means foreground."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DataError(f"{name}: expected a 2-D mask, got shape {m.shape}")
    if m.dtype == bool:
        return m
    return m > 0


def check_probability(p, name):
    if not (0.0 <= p <= 1.0):
        raise DataError(f"{name}: probability must be in [0, 1], got {p}")
    return float(p)
