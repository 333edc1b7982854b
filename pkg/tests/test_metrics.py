import itertools
import json

import numpy as np
import pytest
from PIL import Image

from fmotrack.errors import ConfigError, DataError
from fmotrack.metrics import (
    Counts,
    aggregate,
    format_csv,
    format_report,
    iou,
    load_regions_json,
    match_frame,
    rasterize_polygon,
)


def bbox_pixels(b, shape=(64, 64)):
    """Pixel-center rasterization oracle for bboxes."""
    x, y, w, h = b
    out = np.zeros(shape, bool)
    for i in range(shape[0]):
        for j in range(shape[1]):
            out[i, j] = x <= j + 0.5 < x + w and y <= i + 0.5 < y + h
    return out


def raycast_inside(verts, px, py):
    """Crossing-number point-in-polygon oracle."""
    crossings = 0
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if (y1 <= py < y2) or (y2 <= py < y1):
            if px < x1 + (py - y1) * (x2 - x1) / (y2 - y1):
                crossings += 1
    return crossings % 2 == 1


def brute_force_counts(detections, ground_truths, threshold=0.5):
    """Exhaustive matcher: prefer higher IoU, then lower det index, then
    lower GT index; among maximal one-to-one matchings pick the best."""
    pairs = []
    for d, det in enumerate(detections):
        for g, gt in enumerate(ground_truths):
            try:
                v = iou(det, gt)
            except DataError:
                v = 0.0
            if v > threshold:
                pairs.append((-v, d, g))
    best = None
    for size in range(len(pairs) + 1):
        for combo in itertools.combinations(pairs, size):
            ds = {p[1] for p in combo}
            gs = {p[2] for p in combo}
            if len(ds) != size or len(gs) != size:
                continue  # not one-to-one
            if any(p[1] not in ds and p[2] not in gs for p in pairs):
                continue  # not maximal: another pair could still be added
            key = tuple(sorted(combo))
            if best is None or key < best:
                best = key
    tp = 0 if best is None else len(best)
    return Counts(tp, len(detections) - tp, len(ground_truths) - tp)


# ---------------------------------------------------------------------- iou

def test_iou_identity_and_disjoint():
    m = np.zeros((8, 8), bool)
    m[2:5, 2:5] = True
    assert iou(m, m.copy()) == 1.0
    assert iou((0, 0, 3, 3), (0, 0, 3, 3)) == 1.0
    other = np.zeros((8, 8), bool)
    other[6:8, 6:8] = True
    assert iou(m, other) == 0.0
    assert iou((0, 0, 3, 3), (5, 5, 2, 2)) == 0.0


def test_iou_overlapping_bboxes_match_pixel_count():
    a, b = (0, 0, 10, 10), (5, 0, 10, 10)
    assert iou(a, b) == pytest.approx(50 / 150, abs=1e-9)
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = tuple(int(v) for v in rng.integers(0, 20, 4) + (0, 0, 1, 1))
        b = tuple(int(v) for v in rng.integers(0, 20, 4) + (0, 0, 1, 1))
        ma, mb = bbox_pixels(a), bbox_pixels(b)
        expect = (ma & mb).sum() / (ma | mb).sum()
        assert iou(a, b) == pytest.approx(expect, abs=1e-12)


def test_iou_is_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(30):
        a = tuple(float(v) for v in rng.uniform(0, 15, 4) + (0, 0, 0.5, 0.5))
        b = tuple(float(v) for v in rng.uniform(0, 15, 4) + (0, 0, 0.5, 0.5))
        assert iou(a, b) == iou(b, a)
    ma = rng.random((12, 12)) > 0.6
    mb = rng.random((12, 12)) > 0.6
    ma[0, 0] = mb[1, 1] = True
    assert iou(ma, mb) == iou(mb, ma)


def test_iou_mixed_mask_and_bbox():
    m = np.zeros((16, 16), bool)
    m[4:8, 2:10] = True
    assert iou(m, (2, 4, 8, 4)) == 1.0
    assert iou((2, 4, 8, 4), m) == 1.0
    assert 0 < iou(m, (4, 4, 8, 4)) < 1


def test_iou_empty_handling():
    empty = np.zeros((8, 8), bool)
    full = np.ones((8, 8), bool)
    assert iou(empty, full) == 0.0
    assert iou((0, 0, 0, 5), full) == 0.0
    with pytest.raises(DataError):
        iou(empty, empty.copy())
    with pytest.raises(DataError):
        iou((0, 0, 0, 0), (3, 3, 0, 0))


def test_iou_rejects_mismatched_grids_and_raw_polygons():
    with pytest.raises(DataError):
        iou(np.ones((4, 4), bool), np.ones((5, 4), bool))
    with pytest.raises(DataError):
        iou([(0, 0), (4, 0), (4, 4)], np.ones((5, 5), bool))


# ----------------------------------------------------------------- polygons

def test_square_polygon_equals_bbox():
    poly = [(2, 3), (9, 3), (9, 8), (2, 8)]
    mask = rasterize_polygon(poly, (12, 12))
    assert np.array_equal(mask, bbox_pixels((2, 3, 7, 5), (12, 12)))


def test_polygon_rasterization_matches_raycast_oracle():
    from scipy.spatial import ConvexHull

    rng = np.random.default_rng(11)
    shapes = []
    for _ in range(8):
        pts = rng.uniform(1, 19, size=(7, 2))
        hull = ConvexHull(pts)
        shapes.append([tuple(pts[i]) for i in hull.vertices])
    shapes.append([(2, 2), (17, 2), (17, 17), (10, 17), (10, 8), (2, 8)])
    shapes.append([(1, 1), (18, 1), (18, 4), (4, 4), (4, 9), (18, 9),
                   (18, 12), (1, 12)])
    for verts in shapes:
        mask = rasterize_polygon(verts, (20, 20))
        for i in range(20):
            for j in range(20):
                assert mask[i, j] == raycast_inside(verts, j + 0.5, i + 0.5)


def test_polygon_validation():
    with pytest.raises(DataError):
        rasterize_polygon([(0, 0), (5, 5)], (8, 8))
    star = [(0, 0), (10, 0), (0, 8), (5, -2), (10, 8)]
    with pytest.raises(DataError, match="self-intersecting"):
        rasterize_polygon(star, (12, 12))


# ----------------------------------------------------------------- matching

def test_duplicate_detections_give_one_tp():
    gt = (0, 0, 10, 10)
    d1 = (0, 0, 10, 8)  # IoU 0.8
    d2 = (0, 0, 10, 6)  # IoU 0.6
    assert match_frame([d1, d2], [gt]) == Counts(1, 1, 0)


def test_missed_gt_is_false_negative():
    assert match_frame([], [(0, 0, 5, 5)]) == Counts(0, 0, 1)
    assert match_frame([(20, 20, 4, 4)], [(0, 0, 5, 5)]) == Counts(0, 1, 1)


def test_match_frame_agrees_with_brute_force():
    rng = np.random.default_rng(23)
    for _ in range(120):
        n_det = int(rng.integers(0, 5))
        n_gt = int(rng.integers(0, 5))
        dets = [tuple(map(float, rng.uniform(0, 6, 2))) + (4.0, 4.0)
                for _ in range(n_det)]
        gts = [tuple(map(float, rng.uniform(0, 6, 2))) + (4.0, 4.0)
               for _ in range(n_gt)]
        got = match_frame(dets, gts, threshold=0.3)
        expect = brute_force_counts(dets, gts, threshold=0.3)
        assert got == expect, (dets, gts)


def test_tp_bounded_by_both_sides():
    rng = np.random.default_rng(29)
    for _ in range(60):
        dets = [tuple(map(float, rng.uniform(0, 8, 2))) + (5.0, 5.0)
                for _ in range(int(rng.integers(0, 6)))]
        gts = [tuple(map(float, rng.uniform(0, 8, 2))) + (5.0, 5.0)
               for _ in range(int(rng.integers(0, 6)))]
        c = match_frame(dets, gts)
        assert c.tp <= min(len(dets), len(gts))
        assert c.tp + c.fp == len(dets)
        assert c.tp + c.fn == len(gts)


def test_extra_detection_never_reduces_positives():
    rng = np.random.default_rng(31)
    gts = [(2.0, 2.0, 5.0, 5.0), (10.0, 10.0, 5.0, 5.0)]
    dets = [(2.5, 2.0, 5.0, 5.0)]
    for _ in range(20):
        before = match_frame(dets, gts)
        dets = dets + [tuple(map(float, rng.uniform(0, 12, 2))) + (5.0, 5.0)]
        after = match_frame(dets, gts)
        assert after.tp + after.fp == before.tp + before.fp + 1
        assert after.tp >= before.tp


def test_match_threshold_validation():
    with pytest.raises(ConfigError):
        match_frame([], [], threshold=0.0)
    with pytest.raises(ConfigError):
        match_frame([], [], threshold=1.0)


# -------------------------------------------------------------- aggregation

def test_aggregate_formulas():
    m = aggregate(Counts(2, 1, 3))
    assert m.precision == pytest.approx(2 / 3)
    assert m.recall == pytest.approx(0.4)
    assert m.f1 == pytest.approx(0.5)


def test_aggregate_zero_conventions():
    m = aggregate(Counts(0, 0, 0))
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    assert aggregate(Counts(0, 3, 0)).recall == 0.0
    assert aggregate(Counts(0, 0, 3)).precision == 0.0


def test_f1_is_harmonic_mean_of_p_and_r():
    rng = np.random.default_rng(37)
    for _ in range(200):
        c = Counts(*(int(v) for v in rng.integers(0, 40, 3)))
        m = aggregate(c)
        if m.precision + m.recall > 0:
            assert m.f1 * (m.precision + m.recall) == pytest.approx(
                2 * m.precision * m.recall, abs=1e-12)


def test_f1_consistent_with_published_style_row():
    # P = 0.454 and R = 0.791 imply F1 close to 0.577.
    c = Counts(tp=7910, fp=9513, fn=2090)
    m = aggregate(c)
    assert m.precision == pytest.approx(0.454, abs=5e-4)
    assert m.recall == pytest.approx(0.791, abs=5e-4)
    assert 100 * m.f1 == pytest.approx(57.7, abs=0.05)


def test_counts_validation_and_addition():
    with pytest.raises(DataError):
        Counts(-1, 0, 0)
    assert Counts(1, 2, 3) + Counts(4, 5, 6) == Counts(5, 7, 9)


# ---------------------------------------------------------------- reporting

def test_report_single_sequence_average_equals_row():
    text = format_report([("seq0", 9, Counts(4, 3, 3))])
    lines = text.strip().split("\n")
    assert len(lines) == 4  # header, rule, row, average
    row = lines[2].split()
    avg = lines[3].split()
    assert row[0] == "seq0" and avg[0] == "average"
    assert row[2:] == avg[2:] == ["57.1", "57.1", "57.1"]


def test_report_average_is_micro():
    rows = [("a", 5, Counts(1, 0, 1)), ("b", 5, Counts(3, 1, 0))]
    text = format_report(rows)
    avg = text.strip().split("\n")[-1].split()
    assert avg == ["average", "10", "80.0", "80.0", "80.0"]


def test_csv_report():
    rows = [("a", 5, Counts(1, 0, 1)), ("b", 5, Counts(3, 1, 0))]
    out = format_csv(rows).strip().split("\n")
    assert out[0] == "sequence,n,tp,fp,fn,precision,recall,f1"
    assert out[1] == "a,5,1,0,1,100.0,50.0,66.7"
    assert out[3] == "average,10,4,1,1,80.0,80.0,80.0"
    with pytest.raises(DataError):
        format_csv([])
    with pytest.raises(DataError):
        format_report([])


def test_regions_json_round_trip(tmp_path):
    mask = np.zeros((10, 10), np.uint8)
    mask[2:6, 3:9] = 255
    Image.fromarray(mask).save(tmp_path / "m.png")
    doc = [
        {"frame": 0, "regions": [{"bbox": [1, 2, 3, 4]}]},
        {"frame": 1, "regions": [{"polygon": [[0, 0], [6, 0], [6, 6], [0, 6]]},
                                 {"mask": "m.png"}]},
        {"frame": 2, "regions": []},
    ]
    path = tmp_path / "gt.json"
    path.write_text(json.dumps(doc))
    loaded = load_regions_json(path, (10, 10))
    assert set(loaded) == {0, 1, 2}
    assert loaded[0] == [(1.0, 2.0, 3.0, 4.0)]
    assert loaded[1][0].sum() == 36
    assert np.array_equal(loaded[1][1], mask > 127)
    assert loaded[2] == []
