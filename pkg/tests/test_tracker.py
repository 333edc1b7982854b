import json
from fractions import Fraction

import numpy as np
import pytest

from fmotrack.errors import ConfigError, DataError, NumericalError
from fmotrack.segment import MaskPrediction
from fmotrack.tracker import (
    Blob,
    KalmanState,
    StreakTracker,
    Track,
    TrackerParams,
    TrackStatus,
    _ensure_spd,
    connected_components,
    kalman_init,
    kalman_predict,
    kalman_update,
    read_track_jsonl,
    score_blob,
    score_blobs,
    track_sequence,
    write_track_jsonl,
)


def moment_oracle(ys, xs):
    """Central moments as exact rationals, rounded once at the end."""
    n = len(ys)
    sx, sy = sum(map(int, xs)), sum(map(int, ys))
    sxx = sum(int(v) ** 2 for v in xs)
    syy = sum(int(v) ** 2 for v in ys)
    sxy = sum(int(a) * int(b) for a, b in zip(xs, ys))
    nn = n * n
    return (float(Fraction(n * sxx - sx * sx, nn)),
            float(Fraction(n * syy - sy * sy, nn)),
            float(Fraction(n * sxy - sx * sy, nn)))


def disc_mask(shape, cy, cx, radius):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def masks_from(arrays):
    return [MaskPrediction(a.astype(np.float64), i) for i, a in enumerate(arrays)]


# ------------------------------------------------------------------ moments

def test_moments_match_exact_rational_oracle():
    rng = np.random.default_rng(7)
    for _ in range(500):
        h, w = rng.integers(1, 16, size=2)
        mask = rng.random((h, w)) < 0.45
        if not mask.any():
            mask[rng.integers(h), rng.integers(w)] = True
        for blob in connected_components(mask):
            ys, xs = blob.pixels[:, 0], blob.pixels[:, 1]
            mu20, mu02, mu11 = moment_oracle(ys, xs)
            assert blob.mu20 == mu20
            assert blob.mu02 == mu02
            assert blob.mu11 == mu11


def test_horizontal_line_moments_are_exact():
    mask = np.zeros((3, 7), bool)
    mask[1, 1:6] = True  # 5 x 1 line
    (blob,) = connected_components(mask)
    assert blob.mu20 == 2.0
    assert blob.mu02 == 0.0
    assert blob.mu11 == 0.0
    assert blob.lambda1 == 2.0 and blob.lambda2 == 0.0


def test_square_block_moments():
    mask = np.ones((3, 3), bool)
    (blob,) = connected_components(mask)
    assert blob.mu20 == pytest.approx(2 / 3, abs=0)
    assert blob.mu02 == pytest.approx(2 / 3, abs=0)
    assert blob.mu11 == 0.0
    assert blob.elongation == pytest.approx(0.0, abs=1e-9)


def test_line_is_maximally_elongated():
    mask = np.zeros((2, 12), bool)
    mask[0, :] = True
    (blob,) = connected_components(mask)
    assert blob.elongation > 0.999
    assert blob.length == pytest.approx(np.sqrt(12 * blob.lambda1))


def test_diagonal_pixels_form_one_component():
    mask = np.eye(6, dtype=bool)
    blobs = connected_components(mask)
    assert len(blobs) == 1
    assert blobs[0].area == 6
    assert blobs[0].mu11 == blobs[0].mu20  # 45 degree line


def test_components_are_separated_and_bboxed():
    mask = np.zeros((10, 10), bool)
    mask[1:3, 1:3] = True
    mask[6:9, 5:10] = True
    blobs = sorted(connected_components(mask), key=lambda b: b.area)
    assert [b.area for b in blobs] == [4, 15]
    assert blobs[0].bbox == (1, 1, 2, 2)
    assert blobs[1].bbox == (5, 6, 5, 3)
    assert blobs[1].centroid == (7.0, 7.0)


def test_connected_components_rejects_bad_shape():
    with pytest.raises(DataError):
        connected_components(np.zeros((2, 2, 2)))


# ------------------------------------------------------------------ scoring

def fake_blob(area, elongation):
    px = np.zeros((1, 2), int)
    return Blob(px, area, (0.0, 0.0), 0, 0, 0, 1.0, 0.0, elongation,
                (0, 0, 1, 1))


def test_score_combines_area_and_elongation():
    a = fake_blob(100, 0.4)
    b = fake_blob(50, 1.0)
    scores = score_blobs([a, b])
    assert scores[0] == pytest.approx(0.5 * 1.0 + 0.5 * 0.4)
    assert scores[1] == pytest.approx(0.5 * 0.5 + 0.5 * 1.0)
    assert score_blob(a, [a, b]) == pytest.approx(scores[0])


def test_score_weight_validation():
    a = fake_blob(10, 0.5)
    with pytest.raises(ConfigError):
        score_blobs([a], weights=(0.7, 0.7))
    with pytest.raises(ConfigError):
        score_blobs([a], weights=(-0.5, 1.5))
    with pytest.raises(DataError):
        score_blob(a, [])
    assert score_blobs([]).size == 0


# ------------------------------------------------------------------- kalman

def test_kalman_locks_onto_constant_velocity():
    state = kalman_init((0.0, 0.0), (2.0, -1.0), q=1.0, r=1.0)
    for t in range(1, 30):
        state = kalman_predict(state)
        state = kalman_update(state, (2.0 * t, -1.0 * t))
    assert abs(state.x[2] - 2.0) < 1e-6
    assert abs(state.x[3] + 1.0) < 1e-6


def test_kalman_prediction_bridges_gap_linearly():
    state = kalman_init((0.0, 5.0), (3.0, 0.5), q=1.0, r=1.0)
    for t in range(1, 10):
        state = kalman_predict(state)
        state = kalman_update(state, (3.0 * t, 5.0 + 0.5 * t))
    for _ in range(3):  # three frames without measurements
        state = kalman_predict(state)
    assert abs(state.x[0] - 3.0 * 12) < 1.0
    assert abs(state.x[1] - (5.0 + 0.5 * 12)) < 1.0


def test_covariance_grows_without_measurements():
    state = kalman_init((0.0, 0.0), (1.0, 0.0))
    state = kalman_update(state, (0.0, 0.0))
    traces = [np.trace(state.P)]
    for _ in range(4):
        state = kalman_predict(state)
        traces.append(np.trace(state.P))
    assert all(b > a for a, b in zip(traces, traces[1:]))


def test_tiny_measurement_noise_pins_position():
    state = kalman_init((0.0, 0.0), (0.0, 0.0), q=1.0, r=1e-12)
    state = kalman_predict(state)
    state = kalman_update(state, (7.25, -3.5))
    assert state.x[0] == pytest.approx(7.25, abs=1e-6)
    assert state.x[1] == pytest.approx(-3.5, abs=1e-6)


def test_covariance_stays_symmetric_positive():
    state = kalman_init((0.0, 0.0), (1.0, 1.0), q=0.0, r=1.0)
    for t in range(200):
        state = kalman_predict(state)
        state = kalman_update(state, (float(t), float(t)))
        assert np.allclose(state.P, state.P.T)
        np.linalg.cholesky(state.P)  # must stay PD even with q = 0


def test_broken_covariance_raises():
    with pytest.raises(NumericalError):
        _ensure_spd(np.diag([1.0, 1.0, 1.0, -5.0]))


def test_kalman_init_validation():
    with pytest.raises(ConfigError):
        kalman_init((0, 0), (0, 0), r=0.0)
    with pytest.raises(ConfigError):
        kalman_init((0, 0), (0, 0), q=-1.0)


# ----------------------------------------------------------------- tracking

def linear_masks(n=10, shape=(48, 64), start=6, step=4, y=20, radius=2,
                 drop=()):
    frames = []
    for t in range(n):
        m = np.zeros(shape, bool)
        if t not in drop:
            m |= disc_mask(shape, y, start + step * t, radius)
        frames.append(m)
    return masks_from(frames)


def test_clean_sequence_is_all_measured():
    track = track_sequence(linear_masks())
    assert track.statuses() == [TrackStatus.MEASURED] * 10
    for t, entry in enumerate(track.entries):
        x, y, w, h = entry.bbox
        assert abs((x + w / 2) - (6 + 4 * t + 0.5)) <= 1.0
        assert entry.score > 0


def test_measured_bbox_matches_blob_bbox():
    masks = linear_masks(n=4)
    track = track_sequence(masks)
    for mp, entry in zip(masks, track.entries):
        (blob,) = connected_components(mp.prob > 0.25)
        assert entry.bbox == blob.bbox


def test_gap_is_bridged_by_prediction():
    track = track_sequence(linear_masks(drop={4, 5}))
    st = track.statuses()
    assert st[4] == st[5] == TrackStatus.PREDICTED
    assert st[:4] == [TrackStatus.MEASURED] * 4
    assert st[6:] == [TrackStatus.MEASURED] * 4
    for t in (4, 5):
        x, y, w, h = track.entries[t].bbox
        assert abs((x + w / 2) - (6 + 4 * t + 0.5)) <= 1.0
        assert abs((y + h / 2) - 20.5) <= 1.0
        assert track.entries[t].score == 0.0


def test_all_empty_masks_are_lost():
    track = track_sequence(masks_from([np.zeros((32, 32))] * 5))
    assert track.statuses() == [TrackStatus.LOST] * 5
    assert all(e.bbox == (0, 0, 0, 0) for e in track.entries)


def test_long_gap_loses_then_reacquires():
    masks = linear_masks(n=9, drop={3, 4, 5, 6})
    params = TrackerParams(max_gap=2)
    track = track_sequence(masks, params)
    st = track.statuses()
    assert st[:3] == [TrackStatus.MEASURED] * 3
    assert st[3:5] == [TrackStatus.PREDICTED] * 2
    assert st[5:7] == [TrackStatus.LOST] * 2
    assert st[7:] == [TrackStatus.MEASURED] * 2


def test_predicted_bbox_stays_inside_image():
    # Object runs off the right edge then disappears.
    masks = linear_masks(n=8, shape=(32, 48), start=30, step=6, drop={5, 6, 7})
    track = track_sequence(masks, TrackerParams(max_gap=5))
    H, W = 32, 48
    for entry in track.entries:
        x, y, w, h = entry.bbox
        assert 0 <= x and x + w <= W
        assert 0 <= y and y + h <= H
    assert track.statuses()[5:] == [TrackStatus.PREDICTED] * 3


def test_largest_most_elongated_blob_wins_before_init():
    m = np.zeros((40, 60))
    m[10:12, 5:25] = 1.0  # long streak
    m[30:33, 40:43] = 1.0  # compact clutter
    track = track_sequence(masks_from([m]))
    x, y, w, h = track.entries[0].bbox
    assert (x, y, w, h) == (5, 10, 20, 2)


def test_gate_rejects_distant_clutter_after_init():
    frames = []
    for t in range(6):
        if t < 3:
            frames.append(disc_mask((48, 64), 20, 8 + 4 * t, 2))
        else:
            frames.append(disc_mask((48, 64), 40, 58, 2))  # outside gate
    track = track_sequence(masks_from(frames), TrackerParams(max_gap=5))
    st = track.statuses()
    assert st[:3] == [TrackStatus.MEASURED] * 3
    assert st[3:] == [TrackStatus.PREDICTED] * 3


def test_statuses_invariant_under_2x_upscale():
    base = linear_masks(drop={4, 5})
    up = masks_from([np.kron(mp.prob, np.ones((2, 2))) for mp in base])
    assert track_sequence(base).statuses() == track_sequence(up).statuses()


def test_empty_input_and_shape_mismatch():
    assert track_sequence([]).entries == []
    bad = masks_from([np.zeros((8, 8)), np.zeros((9, 8))])
    with pytest.raises(DataError):
        track_sequence(bad)


def test_tracker_params_validation():
    with pytest.raises(ConfigError):
        track_sequence(linear_masks(2), TrackerParams(binarize_threshold=0.0))
    with pytest.raises(ConfigError):
        track_sequence(linear_masks(2), TrackerParams(w_area=0.9, w_elong=0.9))
    with pytest.raises(ConfigError):
        track_sequence(linear_masks(2), TrackerParams(max_gap=-1))
    with pytest.raises(ConfigError):
        track_sequence(linear_masks(2), TrackerParams(r=0.0))


def test_jsonl_round_trip(tmp_path):
    track = track_sequence(linear_masks(drop={4}))
    path = tmp_path / "track.jsonl"
    write_track_jsonl(track, path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 10
    rec = json.loads(lines[0])
    assert set(rec) == {"frame", "status", "bbox", "score"}
    assert rec["status"] in {"Measured", "Predicted", "Lost"}
    back = read_track_jsonl(path)
    assert [e.to_json() for e in back.entries] == \
        [e.to_json() for e in track.entries]


def test_estimator_wrapper_round_trips_params():
    est = StreakTracker(binarize_threshold=0.3, max_gap=2)
    clone = StreakTracker(**est.get_params())
    assert clone.get_params() == est.get_params()
    track = est.fit().predict(linear_masks(5))
    assert len(track.entries) == 5
