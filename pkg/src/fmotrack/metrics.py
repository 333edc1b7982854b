"""Detection evaluation: IoU matching with dedup, P/R/F1, report tables.

Regions are binary masks (2-D arrays, same grid) or bboxes (x, y, w, h).
Polygons are rasterized to masks first with rasterize_polygon; fill rule is
even-odd at pixel centers, pixel (i, j) centered at (j + 0.5, i + 0.5).
"""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise DataError(f"counts must be nonnegative, got {self}")

    def __add__(self, other):
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


# ------------------------------------------------------------------ regions

def _classify(region):
    if isinstance(region, np.ndarray) and region.ndim == 2:
        return "mask", region > 0.5 if region.dtype != bool else region
    if isinstance(region, (tuple, list)) and len(region) == 4 and \
            all(isinstance(v, (int, float)) for v in region):
        return "bbox", tuple(float(v) for v in region)
    raise DataError(
        f"region must be a 2-D mask or a 4-number bbox, got {type(region).__name__}"
        " (rasterize polygons with rasterize_polygon first)")


def _bbox_empty(b):
    return b[2] <= 0 or b[3] <= 0


def _bbox_to_mask(b, shape):
    x, y, w, h = b
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    cx, cy = xx + 0.5, yy + 0.5
    return (cx >= x) & (cx < x + w) & (cy >= y) & (cy < y + h)


def _iou_or_zero(a, b):
    """Pair IoU with empty regions scoring 0 instead of raising."""
    ka, ra = _classify(a)
    kb, rb = _classify(b)
    a_empty = _bbox_empty(ra) if ka == "bbox" else not ra.any()
    b_empty = _bbox_empty(rb) if kb == "bbox" else not rb.any()
    if a_empty or b_empty:
        return 0.0, a_empty and b_empty
    if ka == "bbox" and kb == "bbox":
        ix = min(ra[0] + ra[2], rb[0] + rb[2]) - max(ra[0], rb[0])
        iy = min(ra[1] + ra[3], rb[1] + rb[3]) - max(ra[1], rb[1])
        inter = max(0.0, ix) * max(0.0, iy)
        union = ra[2] * ra[3] + rb[2] * rb[3] - inter
        return inter / union, False
    if ka == "bbox":
        ra = _bbox_to_mask(ra, rb.shape)
    elif kb == "bbox":
        rb = _bbox_to_mask(rb, ra.shape)
    if ra.shape != rb.shape:
        raise DataError(f"masks on different grids: {ra.shape} vs {rb.shape}")
    inter = int(np.count_nonzero(ra & rb))
    union = int(np.count_nonzero(ra | rb))
    return inter / union, False


def iou(a, b):
    """Intersection over union of two regions; undefined when both empty."""
    value, both_empty = _iou_or_zero(a, b)
    if both_empty:
        raise DataError("IoU of two empty regions is undefined")
    return value


# ----------------------------------------------------------------- polygons

def _orient(a, b, c):
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (v > 0) - (v < 0)


def _on_segment(a, b, p):
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and \
        min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _segments_cross(p1, p2, q1, q2):
    o1, o2 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    o3, o4 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    for a, b, p in ((p1, p2, q1), (p1, p2, q2), (q1, q2, p1), (q1, q2, p2)):
        if _orient(a, b, p) == 0 and _on_segment(a, b, p):
            return True
    return False


def _check_simple(verts):
    n = len(verts)
    for i in range(n):
        a1, a2 = verts[i], verts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex by construction
            b1, b2 = verts[j], verts[(j + 1) % n]
            if _segments_cross(a1, a2, b1, b2):
                raise DataError("polygon is self-intersecting")


def rasterize_polygon(vertices, shape):
    """Even-odd fill of a simple polygon at pixel centers."""
    verts = [(float(x), float(y)) for x, y in vertices]
    if len(verts) < 3:
        raise DataError(f"polygon needs at least 3 vertices, got {len(verts)}")
    _check_simple(verts)
    H, W = shape
    out = np.zeros((H, W), bool)
    edges = [(verts[i], verts[(i + 1) % len(verts)]) for i in range(len(verts))]
    for i in range(H):
        py = i + 0.5
        xs = []
        for (x1, y1), (x2, y2) in edges:
            if (y1 <= py < y2) or (y2 <= py < y1):
                xs.append(x1 + (py - y1) * (x2 - x1) / (y2 - y1))
        xs.sort()
        for x_in, x_out in zip(xs[::2], xs[1::2]):
            # pixel centers j + 0.5 in [x_in, x_out)
            j0 = max(0, int(np.ceil(x_in - 0.5)))
            j1 = min(W, int(np.ceil(x_out - 0.5)))
            if j1 > j0:
                out[i, j0:j1] = True
    return out


# ----------------------------------------------------------------- matching

def match_frame(detections, ground_truths, threshold=0.5):
    """One-to-one greedy matching by descending IoU.

    Each GT is claimed by the admissible detection with the highest IoU,
    ties broken by lower detection index; a detection counts for at most
    one GT, so duplicate hits on one object become false positives.
    """
    if not (0 < threshold < 1):
        raise ConfigError(f"threshold must be in (0,1), got {threshold}")
    pairs = []
    for d, det in enumerate(detections):
        for g, gt in enumerate(ground_truths):
            value, _ = _iou_or_zero(det, gt)
            if value > threshold:
                pairs.append((-value, d, g))
    pairs.sort()
    used_d, used_g = set(), set()
    for _, d, g in pairs:
        if d not in used_d and g not in used_g:
            used_d.add(d)
            used_g.add(g)
    tp = len(used_d)
    return Counts(tp, len(detections) - tp, len(ground_truths) - tp)


def aggregate(counts):
    """Micro-averaged metrics from summed counts; 0 on empty denominators."""
    total = Counts()
    for c in ([counts] if isinstance(counts, Counts) else counts):
        total = total + c
    tp, fp, fn = total.tp, total.fp, total.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return Metrics(precision, recall, f1)


# ---------------------------------------------------------------- reporting

def _pct(value):
    return f"{100.0 * value:.1f}"


def format_report(rows):
    """Aligned text table from (name, n_frames, Counts) rows plus a
    micro-averaged total row."""
    if not rows:
        raise DataError("report needs at least one sequence")
    header = ("sequence", "n", "Pr.", "Rec.", "F1")
    body = []
    total = Counts()
    n_total = 0
    for name, n, c in rows:
        m = aggregate(c)
        body.append((str(name), str(n), _pct(m.precision), _pct(m.recall),
                     _pct(m.f1)))
        total = total + c
        n_total += n
    m = aggregate(total)
    body.append(("average", str(n_total), _pct(m.precision), _pct(m.recall),
                 _pct(m.f1)))
    widths = [max(len(header[i]), *(len(r[i]) for r in body))
              for i in range(len(header))]
    def fmt(row):
        return "  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i])
                         for i, v in enumerate(row))
    lines = [fmt(header), fmt(tuple("-" * w for w in widths))]
    lines += [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


def format_csv(rows):
    if not rows:
        raise DataError("report needs at least one sequence")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sequence", "n", "tp", "fp", "fn",
                     "precision", "recall", "f1"])
    total = Counts()
    n_total = 0
    for name, n, c in rows:
        m = aggregate(c)
        writer.writerow([name, n, c.tp, c.fp, c.fn,
                         _pct(m.precision), _pct(m.recall), _pct(m.f1)])
        total = total + c
        n_total += n
    m = aggregate(total)
    writer.writerow(["average", n_total, total.tp, total.fp, total.fn,
                     _pct(m.precision), _pct(m.recall), _pct(m.f1)])
    return buf.getvalue()


# ----------------------------------------------------------------- GT input

def parse_regions(obj, shape, base_dir=None):
    """Frame regions from decoded JSON: a list of {"frame": i, "regions":
    [{"bbox": ...} | {"polygon": ...} | {"mask": path}]} records."""
    from PIL import Image

    out = {}
    for rec in obj:
        regions = []
        for item in rec.get("regions", []):
            if "bbox" in item:
                regions.append(tuple(float(v) for v in item["bbox"]))
            elif "polygon" in item:
                regions.append(rasterize_polygon(item["polygon"], shape))
            elif "mask" in item:
                path = Path(item["mask"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                arr = np.asarray(Image.open(path).convert("L"))
                regions.append(arr > 127)
            else:
                raise DataError(f"region needs bbox, polygon or mask: {item}")
        out[int(rec["frame"])] = regions
    return out


def load_regions_json(path, shape):
    with open(path) as fh:
        obj = json.load(fh)
    return parse_regions(obj, shape, base_dir=Path(path).parent)
