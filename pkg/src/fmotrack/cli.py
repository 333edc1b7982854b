"""Command line front end: generate, segment, track, eval, bench.

Every run is driven by one JSON config (see config.py) plus a few flag
overrides; flags win.  Exit codes: 0 ok, 1 usage or config error, 2 data
error, 3 external segmenter protocol error.
"""

import argparse
import json
import platform
import shlex
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, load_config, save_config
from .dataset import (
    build_sequence,
    derive_seed,
    easy_regime,
    generate_dataset,
    read_dataset,
    synthetic_clip,
    write_dataset,
)
from .errors import ConfigError, DataError, FmotrackError, ProtocolError
from .metrics import Counts, format_csv, format_report, match_frame
from .segment import BaselineSegmenter, ExternalSegmenter, MaskPrediction
from .tracker import TrackStatus, connected_components, read_track_jsonl, \
    track_sequence, write_track_jsonl


def _build_segmenter(cfg):
    s = cfg.segmenter
    if s.kind == "baseline":
        return BaselineSegmenter(threshold=s.threshold,
                                 morph_radius=s.morph_radius,
                                 min_area=s.min_area)
    return ExternalSegmenter(command=list(s.command), timeout=s.timeout,
                             max_restarts=s.max_restarts)


def _sequence_key(sample_name):
    stem, idx = sample_name.rsplit("_", 1)
    return stem.split("_")[1], int(idx)


# --------------------------------------------------------------- subcommands

def cmd_generate(args, cfg):
    out = Path(args.out or cfg.io.dataset_dir)
    if cfg.generate.easy:
        traj, render, clip_range = easy_regime(cfg.generate.clip_len)
    else:
        traj, render = cfg.trajectory, cfg.render
        clip_range = cfg.generate.clip_value_range
    g = cfg.generate
    samples, manifest = generate_dataset(
        cfg.master_seed, g.n_sequences, size=tuple(g.size), clip_len=g.clip_len,
        traj_config=traj, render_config=render, val_fraction=g.val_fraction,
        min_fmo_fraction=g.min_fmo_fraction, jobs=cfg.jobs,
        clip_value_range=clip_range)
    write_dataset(samples, manifest, out)
    save_config(cfg, out / "run_config.json")

    flags = []
    for meta_path in sorted(out.glob("sample_*/meta.json")):
        with open(meta_path) as fh:
            flags.append(bool(json.load(fh)["is_fmo"]))
    splits = manifest["splits"]
    print(f"dataset: {out}")
    print(f"samples: {len(flags)} ({manifest['n_sequences']} sequences, "
          f"train {len(splits['train'])} / val {len(splits['val'])})")
    print(f"fmo fraction: {np.mean(flags) if flags else 0.0:.3f}")
    print(f"manifest hash: {manifest['config_hash']}")
    return 0


def _baseline_worker(job):
    name, frames, frame_index, params = job
    seg = BaselineSegmenter(**params)
    prob = seg.segment_window(frames, frame_index=frame_index).prob
    return name, prob.astype(np.float32)


def cmd_segment(args, cfg):
    dataset_dir = Path(args.dataset or cfg.io.dataset_dir)
    out = Path(args.out or cfg.io.masks_dir)
    samples, manifest = read_dataset(dataset_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(samples)
    jobs = [(name, samples[name].frames,
             samples[name].meta["frame_indices"][2],
             {"threshold": cfg.segmenter.threshold,
              "morph_radius": cfg.segmenter.morph_radius,
              "min_area": cfg.segmenter.min_area})
            for name in names]

    if cfg.segmenter.kind == "baseline" and cfg.jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_baseline_worker, jobs))
    elif cfg.segmenter.kind == "baseline":
        results = [_baseline_worker(j) for j in jobs]
    else:
        # One protocol child; windows stream through it in name order.
        with _build_segmenter(cfg) as seg:
            results = []
            for name, frames, frame_index, _ in jobs:
                mask = seg.segment_window(frames, frame_index=frame_index)
                results.append((name, mask.prob.astype(np.float32)))

    shape = None
    for name, prob in results:
        np.save(out / f"{name}.npy", prob)
        shape = list(prob.shape)
    index = {"dataset": str(dataset_dir), "samples": names, "shape": shape,
             "segmenter": {"kind": cfg.segmenter.kind,
                           "threshold": cfg.segmenter.threshold,
                           "morph_radius": cfg.segmenter.morph_radius,
                           "min_area": cfg.segmenter.min_area}}
    with open(out / "index.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    print(f"masks: {out} ({len(results)} windows)")
    return 0


def _load_mask_index(masks_dir):
    masks_dir = Path(masks_dir)
    try:
        with open(masks_dir / "index.json") as fh:
            index = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no mask index at {masks_dir}/index.json; "
                        "run the segment stage first")
    return index


def cmd_track(args, cfg):
    masks_dir = Path(args.masks or cfg.io.masks_dir)
    out = Path(args.out or cfg.io.tracks_dir)
    index = _load_mask_index(masks_dir)
    out.mkdir(parents=True, exist_ok=True)

    by_seq = {}
    for name in sorted(index["samples"]):
        seq, j = _sequence_key(name)
        by_seq.setdefault(seq, []).append((j, name))

    histogram = {s.value: 0 for s in TrackStatus}
    seq_names = []
    for seq, members in sorted(by_seq.items()):
        masks = []
        for pos, (j, name) in enumerate(sorted(members)):
            prob = np.load(masks_dir / f"{name}.npy")
            masks.append(MaskPrediction(np.asarray(prob, np.float64), j + 2))
        track = track_sequence(masks, cfg.tracker)
        write_track_jsonl(track, out / f"seq_{seq}.jsonl")
        seq_names.append(f"seq_{seq}")
        for entry in track.entries:
            histogram[entry.status.value] += 1
    with open(out / "index.json", "w") as fh:
        json.dump({"masks": str(masks_dir), "sequences": seq_names},
                  fh, indent=2, sort_keys=True)
    print(f"tracks: {out} ({len(seq_names)} sequences)")
    print("statuses: " + ", ".join(f"{k} {v}" for k, v in sorted(histogram.items())))
    return 0


def _gt_by_sequence(samples):
    out = {}
    for name in sorted(samples):
        seq, j = _sequence_key(name)
        out.setdefault(seq, []).append((j, samples[name]))
    for seq in out:
        out[seq].sort()
    return out


def cmd_eval(args, cfg):
    dataset_dir = Path(args.dataset or cfg.io.dataset_dir)
    source = args.source or cfg.eval.source
    samples, _ = read_dataset(dataset_dir)
    gt_seqs = _gt_by_sequence(samples)
    rows = []

    if source == "tracks":
        tracks_dir = Path(args.tracks or cfg.io.tracks_dir)
        for seq, members in sorted(gt_seqs.items()):
            path = tracks_dir / f"seq_{seq}.jsonl"
            if not path.exists():
                raise DataError(f"missing track file {path}")
            track = read_track_jsonl(path)
            if len(track.entries) != len(members):
                raise DataError(f"track {path} has {len(track.entries)} entries "
                                f"for {len(members)} windows")
            counts = Counts()
            for entry, (j, sample) in zip(track.entries, members):
                gt_bbox = sample.meta["bbox"]
                gts = [tuple(gt_bbox)] if gt_bbox[2] > 0 and gt_bbox[3] > 0 else []
                dets = [tuple(entry.bbox)] if entry.status != TrackStatus.LOST else []
                counts = counts + match_frame(dets, gts, cfg.eval.iou_threshold)
            rows.append((f"seq_{seq}", len(members), counts))
    else:
        masks_dir = Path(args.masks or cfg.io.masks_dir)
        _load_mask_index(masks_dir)  # existence check with a clear error
        for seq, members in sorted(gt_seqs.items()):
            counts = Counts()
            for j, sample in members:
                name = f"sample_{seq}_{j:03d}"
                prob = np.load(masks_dir / f"{name}.npy")
                binary = prob > cfg.eval.binarize_threshold
                dets = []
                for blob in connected_components(binary):
                    region = np.zeros(binary.shape, bool)
                    region[blob.pixels[:, 0], blob.pixels[:, 1]] = True
                    dets.append(region)
                gt = sample.gt.mask > 0.5
                gts = [gt] if gt.any() else []
                counts = counts + match_frame(dets, gts, cfg.eval.iou_threshold)
            rows.append((f"seq_{seq}", len(members), counts))

    report = format_report(rows)
    report_path = Path(args.report or cfg.io.report_path)
    if report_path.parent != Path("."):
        report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report)
    report_path.with_suffix(".csv").write_text(format_csv(rows))
    sys.stdout.write(report)
    print(f"report: {report_path}")
    return 0


def _hardware_label():
    label = platform.processor() or platform.machine() or "unknown cpu"
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    label = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    import os
    return f"{label}, {os.cpu_count()} cpus"


def bench_rows(cfg):
    """Median end-to-end fps (segment + track) per benchmark resolution."""
    traj, render, clip_range = easy_regime()
    rows = []
    for h, w in cfg.bench.resolutions:
        clip_len = cfg.bench.frames + 8
        clip_seed = derive_seed(cfg.master_seed, f"bench:{h}x{w}:clip")
        seq_seed = derive_seed(cfg.master_seed, f"bench:{h}x{w}:seq")
        clip = synthetic_clip(clip_seed, size=(int(h), int(w)),
                              n_frames=clip_len, value_range=clip_range)
        seq = build_sequence(seq_seed, clip, traj, render)
        windows = [(s.frames, s.meta["frame_indices"][2]) for s in seq]
        seg = _build_segmenter(cfg)
        fps = []
        with seg:
            for _ in range(cfg.bench.repeats):
                t0 = time.perf_counter()
                masks = [seg.segment_window(frames, frame_index=fi)
                         for frames, fi in windows]
                track_sequence(masks, cfg.tracker)
                dt = time.perf_counter() - t0
                fps.append(len(windows) / dt)
        rows.append((int(h), int(w), statistics.median(fps)))
    return rows


def cmd_bench(args, cfg):
    if args.frames is not None:
        cfg.bench.frames = args.frames
    if args.repeats is not None:
        cfg.bench.repeats = args.repeats
    cfg.bench.validate()
    rows = bench_rows(cfg)
    print(f"hardware: {_hardware_label()}")
    print(f"{'resolution':>12}  {'fps':>8}")
    for h, w, fps in rows:
        print(f"{f'{h}x{w}':>12}  {fps:>8.1f}")
    return 0


# --------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(sub):
    sub.add_argument("--config", help="JSON run config path")
    sub.add_argument("--seed", type=int, help="override master_seed")
    sub.add_argument("--jobs", type=int, help="override worker count")
    sub.add_argument("--segmenter",
                     help="baseline or external:<command line>")


def _build_parser():
    parser = _Parser(prog="fmotrack",
                     description="Synthetic fast-object datasets, segmentation, "
                                 "tracking, evaluation and benchmarks.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="render a dataset to disk")
    _add_common(p)
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--n-sequences", type=int, dest="n_sequences")
    p.add_argument("--clip-len", type=int, dest="clip_len")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--easy", action="store_true", default=None,
                   help="use the high-contrast preset")
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("segment", help="run a segmenter over a dataset")
    _add_common(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--out", help="masks directory")
    p.set_defaults(func=cmd_segment)

    p = subs.add_parser("track", help="link per-window masks into tracks")
    _add_common(p)
    p.add_argument("--masks", help="masks directory")
    p.add_argument("--out", help="tracks directory")
    p.set_defaults(func=cmd_track)

    p = subs.add_parser("eval", help="score tracks or masks against GT")
    _add_common(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--tracks", help="tracks directory")
    p.add_argument("--masks", help="masks directory")
    p.add_argument("--source", choices=("tracks", "masks"))
    p.add_argument("--report", help="report text path (CSV written alongside)")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("bench", help="throughput over standard resolutions")
    _add_common(p)
    p.add_argument("--frames", type=int)
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def _effective_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.segmenter is not None:
        if args.segmenter == "baseline":
            cfg.segmenter.kind = "baseline"
        elif args.segmenter.startswith("external:"):
            command = shlex.split(args.segmenter[len("external:"):])
            if not command:
                raise ConfigError("--segmenter external: needs a command")
            cfg.segmenter.kind = "external"
            cfg.segmenter.command = tuple(command)
        else:
            raise ConfigError(
                f"--segmenter must be baseline or external:<cmd>, got {args.segmenter!r}")
    for name in ("n_sequences", "clip_len", "size", "easy"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.generate, name,
                    tuple(value) if isinstance(value, list) else value)
    cfg.validate()
    return cfg


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    try:
        cfg = _effective_config(args)
        return args.func(args, cfg) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 3
    except (DataError, FmotrackError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
