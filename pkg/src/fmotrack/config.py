"""One structured run config for the CLI, loaded from JSON.

Sections reuse the module-level dataclasses directly, so a config file
mirrors the library API one to one.  Unknown keys are rejected with their
dotted path; a saved config reloads to an equal value.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import RenderConfig
from .errors import ConfigError
from .synthgen import TrajectoryConfig
from .tracker import TrackerParams

BENCH_RESOLUTIONS = ((216, 384), (324, 576), (430, 768),
                     (576, 1024), (864, 1536))


@dataclass
class IoSection:
    dataset_dir: str = "dataset"
    masks_dir: str = "masks"
    tracks_dir: str = "tracks"
    report_path: str = "report.txt"


@dataclass
class GenerateSection:
    n_sequences: int = 20
    size: tuple = (240, 320)
    clip_len: int = 9
    val_fraction: float = 0.2
    min_fmo_fraction: float = 0.9
    clip_value_range: tuple = (0.05, 0.55)
    easy: bool = False  # swap in the high-contrast slow-motion preset

    def validate(self):
        if len(self.size) != 2 or min(self.size) < 16:
            raise ConfigError(f"generate.size must be [H, W] >= 16, got {self.size}")
        if self.n_sequences < 0:
            raise ConfigError(f"generate.n_sequences must be >= 0, got {self.n_sequences}")
        if self.clip_len < 9:
            raise ConfigError(
                f"generate.clip_len must be >= 9 (median-of-5 cleanup plus a "
                f"5-frame window), got {self.clip_len}")
        if not (0 <= self.val_fraction <= 1):
            raise ConfigError(f"generate.val_fraction must be in [0,1], got {self.val_fraction}")


@dataclass
class SegmenterSection:
    kind: str = "baseline"
    command: tuple = ()  # argv for kind == "external"
    threshold: float = 0.25
    morph_radius: int = 1
    min_area: int = 4
    timeout: float = 10.0
    max_restarts: int = 2

    def validate(self):
        if self.kind not in ("baseline", "external"):
            raise ConfigError(f"segmenter.kind must be baseline or external, got {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise ConfigError("segmenter.kind external needs segmenter.command")


@dataclass
class EvalSection:
    source: str = "tracks"  # score tracker boxes or raw mask components
    iou_threshold: float = 0.5
    binarize_threshold: float = 0.25

    def validate(self):
        if self.source not in ("tracks", "masks"):
            raise ConfigError(f"eval.source must be tracks or masks, got {self.source!r}")
        if not (0 < self.iou_threshold < 1):
            raise ConfigError(f"eval.iou_threshold must be in (0,1), got {self.iou_threshold}")
        if not (0 < self.binarize_threshold < 1):
            raise ConfigError(
                f"eval.binarize_threshold must be in (0,1), got {self.binarize_threshold}")


@dataclass
class BenchSection:
    resolutions: tuple = BENCH_RESOLUTIONS
    frames: int = 12
    repeats: int = 3

    def validate(self):
        if not self.resolutions or any(len(r) != 2 for r in self.resolutions):
            raise ConfigError("bench.resolutions must be a list of [H, W] pairs")
        if self.frames < 1:
            raise ConfigError(f"bench.frames must be >= 1, got {self.frames}")
        if self.repeats < 3:
            raise ConfigError(f"bench.repeats must be >= 3 (median), got {self.repeats}")


@dataclass
class RunConfig:
    master_seed: int = 0
    jobs: int = 1
    io: IoSection = field(default_factory=IoSection)
    generate: GenerateSection = field(default_factory=GenerateSection)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    segmenter: SegmenterSection = field(default_factory=SegmenterSection)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def validate(self):
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.master_seed < 0:
            raise ConfigError(f"master_seed must be >= 0, got {self.master_seed}")
        for section in (self.generate, self.segmenter, self.eval, self.bench):
            section.validate()
        self.render.validate()
        self.tracker.validate()
        return self


def _deep_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_deep_tuple(v) for v in value)
    return value


def _from_dict(cls, obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"config section {path or 'root'} must be an object, "
                          f"got {type(obj).__name__}")
    blank = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in obj.items():
        if key not in names:
            raise ConfigError(f"unknown config key: {path}{key}")
        current = getattr(blank, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _from_dict(type(current), value, f"{path}{key}.")
        elif isinstance(current, tuple):
            kwargs[key] = _deep_tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(obj):
    return _from_dict(RunConfig, obj, "")


def config_to_dict(config):
    def conv(value):
        if dataclasses.is_dataclass(value):
            return {f.name: conv(getattr(value, f.name))
                    for f in dataclasses.fields(value)}
        if isinstance(value, (list, tuple)):
            return [conv(v) for v in value]
        return value
    return conv(config)


def load_config(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return config_from_dict(obj)


def save_config(config, path):
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
