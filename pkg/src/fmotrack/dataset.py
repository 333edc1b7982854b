"""Sequence assembly and on-disk dataset layout.

One sample = 5 consecutive rendered frames + the middle frame's GT mask +
metadata.  On disk each sample is its own directory (frame_1..5.png, gt.png,
meta.json) so anything can be eyeballed with an image viewer; manifest.json
sits at the root and is written last, atomically.
"""

import dataclasses
import functools
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .errors import ConfigError, DataError
from .renderer import (
    GtMask,
    RenderParams,
    ball_template,
    make_gt_mask,
    median_background,
    synthesize_frame,
    tint_and_resize,
)
from .synthgen import ArenaConfig, generate_trajectory, label_fmo, rasterize_psf
from .validation import as_image

META_KEYS = ("seed", "frame_indices", "diameter_px", "b_f", "is_fmo", "bbox", "events")


@dataclass
class RenderConfig:
    """Per-sequence appearance draws and rendering knobs."""

    diameter_range: tuple = (5.0, 9.0)
    b_f_range: tuple = (0.8, 1.4)
    color_min: float = 0.6
    gt_threshold: float = 0.1
    template_diameter: int = 32
    stride: int = 1
    defocus_radius: float = 0.0
    sensor_noise_sigma: float = 0.0

    def validate(self):
        d0, d1 = self.diameter_range
        if not (2 <= d0 <= d1):
            raise ConfigError(f"diameter_range invalid: {self.diameter_range}")
        b0, b1 = self.b_f_range
        if not (0 < b0 <= b1):
            raise ConfigError(f"b_f_range invalid: {self.b_f_range}")
        if not (0 <= self.color_min <= 1):
            raise ConfigError(f"color_min must be in [0,1], got {self.color_min}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not (0 < self.gt_threshold < 1):
            raise ConfigError(f"gt_threshold must be in (0,1), got {self.gt_threshold}")


@dataclass
class SequenceSample:
    frames: list  # 5 RGB images, float64 in [0,1]
    gt: GtMask
    meta: dict

    def stacked(self):
        """Channel-concatenated (H, W, 15) view of the 5-frame window."""
        return np.concatenate(self.frames, axis=2)


def validate_sample(sample):
    if len(sample.frames) != 5:
        raise DataError(f"sample must hold 5 frames, got {len(sample.frames)}")
    shape = sample.frames[0].shape
    for i, f in enumerate(sample.frames):
        as_image(f, channels=3, name=f"frame {i}")
        if f.shape != shape:
            raise DataError("sample frames must share one size")
    if sample.gt.mask.shape != shape[:2]:
        raise DataError("gt mask size must match the frames")
    if sample.stacked().shape[2] != 15:
        raise DataError("stacked window must have 15 channels")
    missing = [k for k in META_KEYS if k not in sample.meta]
    if missing:
        raise DataError(f"sample meta missing keys: {missing}")
    return sample


def mask_bbox(mask):
    """Tight [x, y, w, h] of the nonzero region; all-zero -> [0, 0, 0, 0]."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return [0, 0, 0, 0]
    return [int(xs.min()), int(ys.min()),
            int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)]


@functools.lru_cache(maxsize=8)
def _template(diameter):
    return ball_template(diameter)


def build_sequence(seed, background_clip, traj_config, render_config):
    """Render one trajectory over a clip and cut it into 5-frame samples.

    The clip is median-preprocessed (sliding median of 5), the trajectory
    spans the cleaned frames, and every stride-th contiguous 5-frame window
    becomes one sample.  Deterministic per seed.
    """
    render_config.validate()
    if len(background_clip) < 9:
        raise DataError(f"clip must hold >= 9 frames, got {len(background_clip)}")
    clip = [as_image(f, channels=3, name=f"clip frame {i}")
            for i, f in enumerate(background_clip)]
    H, W = clip[0].shape[:2]
    for f in clip[1:]:
        if f.shape != clip[0].shape:
            raise DataError("clip frames must share one size")

    rng = np.random.default_rng(seed)
    color = rng.uniform(render_config.color_min, 1.0, size=3)
    diameter = rng.uniform(*render_config.diameter_range)
    b_f = rng.uniform(*render_config.b_f_range)

    base, alpha = _template(render_config.template_diameter)
    sprite = tint_and_resize(base, alpha, color, diameter)
    if sprite.side >= min(H, W):
        raise DataError(f"sprite side {sprite.side} does not fit a {H}x{W} arena")

    cleaned = [median_background(clip[i:i + 5]) for i in range(len(clip) - 4)]
    n_frames = len(cleaned)
    margin = sprite.side / 2 + 1
    arena = ArenaConfig(W, H, margin=margin)
    traj = generate_trajectory(rng, dataclasses.replace(traj_config, n_frames=n_frames), arena)
    label_fmo(traj, diameter)

    params = RenderParams(b_f=b_f, defocus_radius=render_config.defocus_radius,
                          sensor_noise_sigma=render_config.sensor_noise_sigma)
    psfs = [rasterize_psf(traj, t, (H, W)) for t in range(n_frames)]
    rendered = [synthesize_frame(cleaned[t], sprite, psfs[t], params, rng=rng)[0]
                for t in range(n_frames)]

    seed_value = int(seed) if isinstance(seed, (int, np.integer)) else None
    samples = []
    for w in range(0, n_frames - 4, render_config.stride):
        mid = w + 2
        gt = make_gt_mask(psfs[mid], sprite.M, render_config.gt_threshold)
        window_events = [ev.to_json() for ev in traj.events
                         if w <= ev.frame_index <= w + 4]
        meta = {
            "seed": seed_value,
            "frame_indices": list(range(w, w + 5)),
            "diameter_px": float(diameter),
            "b_f": float(b_f),
            "is_fmo": bool(traj.is_fmo[mid]),
            "bbox": mask_bbox(gt.mask),
            "events": window_events,
        }
        samples.append(validate_sample(SequenceSample(rendered[w:w + 5], gt, meta)))
    return samples


def easy_regime(n_frames_hint=9):
    """Generator settings for the well-separated test regime.

    Bright slow-ish ball (still faster than its diameter per frame) over a
    dark static background: streak contrast stays comfortably above the
    baseline threshold.  Returns (traj_config, render_config, clip_value_range).
    """
    from .synthgen import TrajectoryConfig

    traj = TrajectoryConfig(speed_min=10.0, speed_max=14.0,
                            p_hit=0.0, p_occlusion=0.0, p_stop=0.0)
    render = RenderConfig(diameter_range=(7.0, 10.0), b_f_range=(1.25, 1.4),
                          color_min=0.9)
    return traj, render, (0.02, 0.18)


# ----------------------------------------------------------------- dataset IO

def derive_seed(master_seed, tag):
    """Stable 63-bit sub-seed for (master_seed, tag)."""
    digest = hashlib.sha256(f"{master_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2 ** 63 - 1)


def config_fingerprint(config):
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def synthetic_clip(seed, size=(240, 320), n_frames=9, value_range=(0.05, 0.55),
                   cells=(8, 10)):
    """Static smooth random background repeated over the clip.

    A coarse random grid upsampled bilinearly gives soft gradients; keeping
    it dark leaves headroom for a bright foreground.
    """
    H, W = size
    rng = np.random.default_rng(seed)
    lo, hi = value_range
    coarse = rng.uniform(lo, hi, size=cells + (3,))
    planes = []
    for c in range(3):
        im = PilImage.fromarray(coarse[:, :, c].astype(np.float32), mode="F")
        planes.append(np.asarray(im.resize((W, H), PilImage.Resampling.BILINEAR),
                                 dtype=np.float64))
    frame = np.clip(np.stack(planes, axis=2), 0.0, 1.0)
    return [frame.copy() for _ in range(n_frames)]


def _dataset_config_snapshot(size, clip_len, n_sequences, val_fraction,
                             traj_config, render_config, clip_value_range):
    snapshot = {
        "size": list(size),
        "clip_len": clip_len,
        "n_sequences": n_sequences,
        "val_fraction": val_fraction,
        "clip_value_range": list(clip_value_range),
        "trajectory": dataclasses.asdict(traj_config),
        "render": dataclasses.asdict(render_config),
    }
    # JSON round-trip normalizes tuples to lists so the in-memory manifest
    # equals what read_dataset will hand back.
    return json.loads(json.dumps(snapshot))


def generate_sequence_samples(master_seed, index, size, clip_len, traj_config,
                              render_config, min_fmo_fraction=0.9, max_attempts=20,
                              clip_value_range=(0.05, 0.55)):
    """Windows for one sequence, retrying seeds until FMO coverage is met.

    Deterministic per (master_seed, index): retries walk a fixed seed chain.
    Returns (samples, attempt_used).
    """
    best, best_cov = None, -1.0
    for attempt in range(max_attempts):
        clip_seed = derive_seed(master_seed, f"{index}:{attempt}:clip")
        seq_seed = derive_seed(master_seed, f"{index}:{attempt}:seq")
        clip = synthetic_clip(clip_seed, size=size, n_frames=clip_len,
                              value_range=clip_value_range)
        samples = build_sequence(seq_seed, clip, traj_config, render_config)
        cov = float(np.mean([s.meta["is_fmo"] for s in samples]))
        if cov >= min_fmo_fraction:
            return samples, attempt
        if cov > best_cov:
            best, best_cov = samples, cov
    return best, max_attempts - 1


def split_of(master_seed, index, val_fraction):
    """Stable train/val assignment from (master_seed, sequence index) only."""
    u = derive_seed(master_seed, f"{index}:split") / float(2 ** 63)
    return "val" if u < val_fraction else "train"


def generate_dataset(master_seed, n_sequences, size=(240, 320), clip_len=9,
                     traj_config=None, render_config=None, val_fraction=0.2,
                     min_fmo_fraction=0.9, jobs=1, clip_value_range=(0.05, 0.55)):
    """Full dataset: returns (ordered {name: sample}, manifest dict)."""
    from .synthgen import TrajectoryConfig

    traj_config = traj_config if traj_config is not None else TrajectoryConfig()
    render_config = render_config if render_config is not None else RenderConfig()
    if n_sequences < 0:
        raise ConfigError(f"n_sequences must be >= 0, got {n_sequences}")

    work = [(master_seed, i, size, clip_len, traj_config, render_config,
             min_fmo_fraction, clip_value_range) for i in range(n_sequences)]
    if jobs > 1 and n_sequences > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seq = list(pool.map(_sequence_worker, work))  # index order kept
    else:
        per_seq = [_sequence_worker(args) for args in work]

    samples = {}
    splits = {"train": [], "val": []}
    for i, seq_samples in enumerate(per_seq):
        part = split_of(master_seed, i, val_fraction)
        for j, sample in enumerate(seq_samples):
            name = f"sample_{i:04d}_{j:03d}"
            samples[name] = sample
            splits[part].append(name)

    config = _dataset_config_snapshot(size, clip_len, n_sequences, val_fraction,
                                      traj_config, render_config, clip_value_range)
    manifest = {
        "master_seed": int(master_seed),
        "config": config,
        "config_hash": config_fingerprint(config),
        "n_sequences": int(n_sequences),
        "n_samples": len(samples),
        "splits": splits,
    }
    return samples, manifest


def _sequence_worker(args):
    (master_seed, i, size, clip_len, traj_config, render_config,
     min_fmo, clip_value_range) = args
    samples, _ = generate_sequence_samples(master_seed, i, size, clip_len,
                                           traj_config, render_config,
                                           min_fmo_fraction=min_fmo,
                                           clip_value_range=clip_value_range)
    return samples


def _save_png(path, arr, mode):
    PilImage.fromarray(arr, mode).save(path)


def write_dataset(samples, manifest, root):
    """Write samples then the manifest (write-then-rename, so readers never
    see a manifest that references half-written samples)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for name, sample in samples.items():
        d = root / name
        d.mkdir(exist_ok=True)
        for i, frame in enumerate(sample.frames, start=1):
            _save_png(d / f"frame_{i}.png",
                      (np.clip(frame, 0, 1) * 255).round().astype(np.uint8), "RGB")
        gt8 = (sample.gt.mask > 0.5).astype(np.uint8) * 255
        _save_png(d / "gt.png", gt8, "L")
        with open(d / "meta.json", "w") as fh:
            json.dump(sample.meta, fh, indent=2, sort_keys=True)
    tmp = root / "manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, root / "manifest.json")
    return root


def read_dataset(root):
    """Load a dataset directory back into ({name: sample}, manifest).

    Refuses corrupt manifests (hash mismatch) and enumerates missing files.
    """
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataError(f"no manifest.json under {root}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    for key in ("master_seed", "config", "config_hash", "n_samples", "splits"):
        if key not in manifest:
            raise DataError(f"manifest missing key {key!r}")
    if config_fingerprint(manifest["config"]) != manifest["config_hash"]:
        raise DataError("manifest config hash mismatch (corrupt manifest)")

    names = sorted(manifest["splits"]["train"] + manifest["splits"]["val"])
    if len(names) != manifest["n_samples"]:
        raise DataError(
            f"manifest n_samples={manifest['n_samples']} but splits list {len(names)}")

    wanted = [f"frame_{i}.png" for i in range(1, 6)] + ["gt.png", "meta.json"]
    missing = []
    for name in names:
        for fname in wanted:
            if not (root / name / fname).exists():
                missing.append(f"{name}/{fname}")
    if missing:
        raise DataError(f"dataset incomplete, missing: {', '.join(missing)}")

    samples = {}
    for name in names:
        d = root / name
        frames = []
        for i in range(1, 6):
            with PilImage.open(d / f"frame_{i}.png") as im:
                frames.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
        with PilImage.open(d / "gt.png") as im:
            raw = np.asarray(im, dtype=np.uint8)
        bad = set(np.unique(raw)) - {0, 255}
        if bad:
            raise DataError(f"{name}/gt.png not binary, saw values {sorted(bad)}")
        with open(d / "meta.json") as fh:
            meta = json.load(fh)
        gt_frame = meta["frame_indices"][2] if meta.get("frame_indices") else 0
        gt = GtMask((raw == 255).astype(np.float64), gt_frame)
        samples[name] = validate_sample(SequenceSample(frames, gt, meta))
    return samples, manifest
