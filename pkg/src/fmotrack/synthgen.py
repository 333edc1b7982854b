"""Random trajectory generation and path-PSF rasterization.

Coordinates are sub-pixel image coordinates: x grows rightwards (columns),
y grows downwards (rows), pixel centers at integer positions.  Time is
measured in frame periods; frame t exposes during [t, t + e] where e is the
exposure fraction, and the remaining (1 - e) of the period advances motion
without depositing anything.

The integrator is event-driven: between events motion follows the exact
ballistic parabola, and surface hits are resolved at their exact crossing
time inside a step.  This makes the continuous path independent of the
sampling density, so rasterizations at different substep counts converge.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError

# A reflected bounce whose flight time until the next contact drops below
# this threshold collapses into resting contact (Zeno guard).
_REST_FLIGHT_TIME = 1e-6
_TOL = 1e-12


class EventKind(str, Enum):
    BOUNCE = "bounce"
    HIT = "hit"
    OCCLUSION_START = "occlusion_start"
    OCCLUSION_END = "occlusion_end"
    STOP = "stop"


@dataclass
class TrajectoryEvent:
    frame_index: int
    kind: EventKind
    detail: object = None

    def to_json(self):
        detail = self.detail
        if isinstance(detail, (tuple, list, np.ndarray)):
            detail = [float(v) for v in detail]
        return {"frame": int(self.frame_index), "kind": self.kind.value, "detail": detail}


@dataclass(frozen=True)
class BounceSurface:
    """Axis-aligned one-sided reflective line.

    axis: 0 for a vertical line (fixed x), 1 for a horizontal line (fixed y).
    normal_sign: +1 if the allowed halfspace is coord >= offset, -1 if
    coord <= offset.  span bounds the line along the other axis (None means
    the full image extent).  Objects on the blocked side pass through freely,
    which is what makes an interior "table" one-sided.
    """

    axis: int
    offset: float
    normal_sign: int
    span: tuple | None = None
    name: str = ""


def border_surfaces(width, height):
    return [
        BounceSurface(0, 0.0, +1, name="left"),
        BounceSurface(0, float(width - 1), -1, name="right"),
        BounceSurface(1, 0.0, +1, name="top"),
        BounceSurface(1, float(height - 1), -1, name="bottom"),
    ]


@dataclass
class ArenaConfig:
    width: int
    height: int
    margin: float = 1.0
    surfaces: list = None

    def __post_init__(self):
        if self.surfaces is None:
            self.surfaces = border_surfaces(self.width, self.height)

    def validate(self):
        if self.width < 16 or self.height < 16:
            raise ConfigError(f"arena must be at least 16x16, got {self.width}x{self.height}")
        for s in self.surfaces:
            limit = (self.width - 1) if s.axis == 0 else (self.height - 1)
            if not (0.0 <= s.offset <= limit):
                raise ConfigError(f"surface {s.name!r} at {s.offset} lies outside the image")
        if self.margin < 0:
            raise ConfigError("arena margin must be nonnegative")

    def with_table(self, y, x0=None, x1=None):
        """Return a copy with an added one-sided table top at row y."""
        span = None if x0 is None else (float(x0), float(x1))
        table = BounceSurface(1, float(y), -1, span=span, name="table")
        return ArenaConfig(self.width, self.height, self.margin, list(self.surfaces) + [table])


@dataclass
class TrajectoryConfig:
    speed_min: float = 12.0
    speed_max: float = 24.0
    gravity: tuple = (0.0, 0.4)
    restitution: float = 0.8
    p_hit: float = 0.0
    p_occlusion: float = 0.0
    occlusion_len: tuple = (1, 2)
    p_stop: float = 0.0
    exposure_fraction: float = 0.85
    substeps_per_frame: int = 16
    n_frames: int = 9

    def validate(self, arena):
        if not (0 < self.speed_min <= self.speed_max):
            raise ConfigError(f"need 0 < speed_min <= speed_max, got [{self.speed_min}, {self.speed_max}]")
        if not (0 < self.exposure_fraction <= 1):
            raise ConfigError(f"exposure_fraction must be in (0, 1], got {self.exposure_fraction}")
        if not (0 < self.restitution <= 1):
            raise ConfigError(f"restitution must be in (0, 1], got {self.restitution}")
        for name in ("p_hit", "p_occlusion", "p_stop"):
            p = getattr(self, name)
            if not (0 <= p <= 1):
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.occlusion_len
        if not (1 <= lo <= hi):
            raise ConfigError(f"occlusion_len range invalid: {self.occlusion_len}")
        if self.substeps_per_frame < 8:
            raise ConfigError(f"substeps_per_frame must be >= 8, got {self.substeps_per_frame}")
        if self.n_frames < 5:
            raise ConfigError(f"n_frames must be >= 5, got {self.n_frames}")
        room = min(arena.width, arena.height) - 1 - 2 * arena.margin
        if self.speed_max > room:
            raise ConfigError(
                f"speed_max {self.speed_max} cannot fit in the {arena.width}x{arena.height} "
                f"arena within one frame (room {room:g} px)")


@dataclass
class Trajectory:
    """Sampled object path.

    positions has shape (n_frames, S, 2) holding (x, y) at S uniformly spaced
    times spanning each frame's exposure window; visible mirrors it per sample.
    per_frame_displacement is |p(exposure end) - p(exposure start)| per frame.
    """

    n_frames: int
    substeps: int
    exposure_fraction: float
    positions: np.ndarray
    visible: np.ndarray
    events: list
    per_frame_displacement: np.ndarray
    is_fmo: np.ndarray = None


@dataclass
class PathPSF:
    """Sparse nonnegative unit-sum footprint of one frame's exposure."""

    frame_index: int
    shape: tuple
    ys: np.ndarray
    xs: np.ndarray
    weights: np.ndarray

    @property
    def is_empty(self):
        return self.weights.size == 0

    def total(self):
        return float(self.weights.sum())

    def to_dense(self):
        dense = np.zeros(self.shape, dtype=np.float64)
        dense[self.ys, self.xs] = self.weights
        return dense

    def as_dict(self):
        return {(int(y), int(x)): float(w) for y, x, w in zip(self.ys, self.xs, self.weights)}


class _Ballistic:
    """Point state advanced exactly through gravity, bounces and rest contact."""

    def __init__(self, pos, vel, gravity, surfaces, restitution):
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.array(vel, dtype=np.float64)
        self.gravity = np.array(gravity, dtype=np.float64)
        self.surfaces = surfaces
        self.restitution = restitution
        self.stopped = False
        self.resting = None  # index into surfaces, or None
        self.bounces = []  # surface names, drained by the caller per frame

    def _effective_gravity(self):
        g = self.gravity.copy()
        if self.resting is not None:
            g[self.surfaces[self.resting].axis] = 0.0
        return g

    def _earliest_crossing(self, dt, g):
        """Earliest (tau, surface_index) where the parabola leaves the allowed
        halfspace of some surface within (0, dt], or None."""
        best_tau, best_idx = None, None
        for idx, s in enumerate(self.surfaces):
            if idx == self.resting:
                continue
            a = s.axis
            c0 = self.pos[a] - s.offset
            v = self.vel[a]
            ga = g[a]
            ns = s.normal_sign
            if ns * c0 < -_TOL:
                continue  # starting on the blocked side: surface is transparent
            for tau in _quadratic_roots(0.5 * ga, v, c0, dt):
                speed_in = -(v + ga * tau) * ns  # positive when moving into the blocked side
                if speed_in < _TOL and not (abs(speed_in) <= _TOL and -ga * ns > _TOL):
                    continue
                if s.span is not None:
                    # Contact must persist just past tau: a touch exactly at a
                    # span edge while sliding off it is not supported.
                    other = 1 - a
                    q = self.pos[other] + self.vel[other] * tau + 0.5 * g[other] * tau * tau
                    vq = self.vel[other] + g[other] * tau
                    lo_ok = (q > s.span[0]) if vq < 0 else (q >= s.span[0])
                    hi_ok = (q < s.span[1]) if vq > 0 else (q <= s.span[1])
                    if not (lo_ok and hi_ok):
                        continue
                if best_tau is None or tau < best_tau:
                    best_tau, best_idx = tau, idx
                break  # roots are sorted; first admissible one is earliest
        if best_tau is None:
            return None
        return best_tau, best_idx

    def _rest_exit_time(self, dt):
        """Time at which a resting object slides off a finite surface span."""
        if self.resting is None:
            return None
        s = self.surfaces[self.resting]
        if s.span is None:
            return None
        other = 1 - s.axis
        v = self.vel[other]
        if v == 0:
            return None
        edge = s.span[1] if v > 0 else s.span[0]
        tau = (edge - self.pos[other]) / v
        if 0 < tau <= dt:
            return tau
        return None

    def advance(self, dt):
        if self.stopped or dt <= 0:
            return
        remaining = dt
        for _ in range(100_000):
            g = self._effective_gravity()
            exit_tau = self._rest_exit_time(remaining)
            hit = self._earliest_crossing(remaining, g)
            if hit is not None and (exit_tau is None or hit[0] <= exit_tau):
                tau, idx = hit
                self._move(tau, g)
                s = self.surfaces[idx]
                self.pos[s.axis] = s.offset  # pin exactly; avoids re-crossing drift
                vn = self.vel[s.axis]
                self.vel[s.axis] = -self.restitution * vn
                self.bounces.append(s.name)
                ga = self.gravity[s.axis]
                pushes_in = -ga * s.normal_sign > 0
                if pushes_in and 2.0 * abs(self.vel[s.axis]) / abs(ga) < _REST_FLIGHT_TIME:
                    self.vel[s.axis] = 0.0
                    self.resting = idx
                remaining -= tau
            elif exit_tau is not None:
                self._move(exit_tau, g)
                self.resting = None
                remaining -= exit_tau
            else:
                self._move(remaining, g)
                return
            if remaining <= _TOL:
                return
        raise DataError("bounce resolution did not terminate (degenerate surface setup)")

    def _move(self, tau, g):
        self.pos += self.vel * tau + 0.5 * g * tau * tau
        self.vel += g * tau


def _quadratic_roots(a, b, c, upper):
    """Real roots of a*t^2 + b*t + c = 0 inside [0, upper], ascending."""
    roots = []
    if a == 0.0:
        if b != 0.0:
            roots.append(-c / b)
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            # Citardauq pairing avoids cancellation for small roots.
            q = -0.5 * (b + math.copysign(sq, b)) if b != 0.0 else 0.5 * sq
            if q != 0.0:
                roots.extend((q / a, c / q))
            else:
                roots.append(0.0)
    out = sorted(r for r in roots if 0.0 <= r <= upper)
    return out


def generate_trajectory(seed, config, arena):
    """Simulate one random object path under gravity, bounces and events.

    Deterministic per (seed, config, arena).  Probabilistic events (hit,
    stop, occlusion) are Bernoulli draws at frame boundaries; bounces happen
    on surface contact.
    """
    arena.validate()
    config.validate(arena)
    rng = np.random.default_rng(seed)

    lo_x, hi_x = arena.margin, arena.width - 1 - arena.margin
    lo_y, hi_y = arena.margin, arena.height - 1 - arena.margin
    if lo_x >= hi_x or lo_y >= hi_y:
        raise ConfigError(f"margin {arena.margin} leaves no room to place the object")

    pos = None
    for _ in range(64):
        cand = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
        clear = all(abs(cand[s.axis] - s.offset) > 1e-9 for s in arena.surfaces)
        if clear:
            pos = cand
            break
    if pos is None:
        raise DataError("object placement did not converge after 64 attempts")

    theta = rng.uniform(0.0, 2.0 * math.pi)
    speed = rng.uniform(config.speed_min, config.speed_max)
    vel = np.array([speed * math.cos(theta), speed * math.sin(theta)])

    n, S, e = config.n_frames, config.substeps_per_frame, config.exposure_fraction
    state = _Ballistic(pos, vel, config.gravity, arena.surfaces, config.restitution)
    positions = np.empty((n, S, 2), dtype=np.float64)
    visible = np.ones((n, S), dtype=bool)
    events = []
    occluded_until = 0

    def random_velocity():
        th = rng.uniform(0.0, 2.0 * math.pi)
        sp = rng.uniform(config.speed_min, config.speed_max)
        return np.array([sp * math.cos(th), sp * math.sin(th)])

    for t in range(n):
        if t > 0:
            u_hit, u_stop, u_occ = rng.uniform(size=3)
            if not state.stopped and u_hit < config.p_hit:
                state.vel = random_velocity()
                state.resting = None
                events.append(TrajectoryEvent(t, EventKind.HIT, tuple(state.vel)))
            if not state.stopped and u_stop < config.p_stop:
                state.stopped = True
                state.vel[:] = 0.0
                events.append(TrajectoryEvent(t, EventKind.STOP))
            if t >= occluded_until and u_occ < config.p_occlusion:
                length = int(rng.integers(config.occlusion_len[0], config.occlusion_len[1] + 1))
                occluded_until = min(t + length, n)
                events.append(TrajectoryEvent(t, EventKind.OCCLUSION_START))
                events.append(TrajectoryEvent(occluded_until, EventKind.OCCLUSION_END))

        positions[t, 0] = state.pos
        dt_sample = e / (S - 1)
        for k in range(1, S):
            state.advance(dt_sample)
            positions[t, k] = state.pos
        state.advance(1.0 - e)

        for name in state.bounces:
            events.append(TrajectoryEvent(t, EventKind.BOUNCE, name))
        state.bounces.clear()
        if t < occluded_until:
            visible[t, :] = False

    displacement = np.linalg.norm(positions[:, -1] - positions[:, 0], axis=1)
    events.sort(key=lambda ev: (ev.frame_index, 0 if ev.kind is EventKind.OCCLUSION_END else 1))
    return Trajectory(n, S, e, positions, visible, events, displacement)


def label_fmo(trajectory, diameter):
    """Per-frame FMO flag: exposure displacement strictly exceeds the diameter."""
    if diameter <= 0:
        raise DataError(f"diameter must be positive, got {diameter}")
    flags = trajectory.per_frame_displacement > diameter
    trajectory.is_fmo = flags
    return flags


def rasterize_psf(trajectory, frame_index, image_size):
    """Rasterize one frame's exposure path into a unit-sum sparse PSF.

    Each visible pair of consecutive samples contributes its chord; the
    bilinear footprint is integrated exactly along the chord (the weights
    are quadratic in the path parameter between pixel-grid crossings, so
    Simpson's rule is exact).  Fully occluded or fully out-of-bounds frames
    come back empty.
    """
    if not (0 <= frame_index < trajectory.n_frames):
        raise DataError(f"frame_index {frame_index} outside trajectory of {trajectory.n_frames} frames")
    H, W = image_size
    pts = trajectory.positions[frame_index]
    vis = trajectory.visible[frame_index]

    acc = np.zeros((H, W), dtype=np.float64)
    if pts.shape[0] == 1:
        if vis[0]:
            _deposit_points(acc, pts[0:1, 0], pts[0:1, 1], np.ones(1))
    else:
        keep = vis[:-1] & vis[1:]
        if keep.any():
            x0 = pts[:-1, 0][keep]
            y0 = pts[:-1, 1][keep]
            x1 = pts[1:, 0][keep]
            y1 = pts[1:, 1][keep]
            _splat_segments(acc, x0, y0, x1, y1)

    total = acc.sum()
    if total <= 0.0:
        empty = np.empty(0)
        return PathPSF(frame_index, (H, W), empty.astype(np.int64), empty.astype(np.int64), empty)
    acc /= total
    ys, xs = np.nonzero(acc)
    return PathPSF(frame_index, (H, W), ys, xs, acc[ys, xs])


def _splat_segments(acc, x0, y0, x1, y1):
    """Exact bilinear line-integral splat of equal-weight segments into acc."""
    m = x0.size
    seg_ids = []
    t_vals = []

    # Interval endpoints: segment ends plus every pixel-grid crossing.
    seg_ids.append(np.repeat(np.arange(m), 2))
    t_vals.append(np.tile(np.array([0.0, 1.0]), m))
    for p0, p1 in ((x0, x1), (y0, y1)):
        lo = np.ceil(np.minimum(p0, p1))
        hi = np.floor(np.maximum(p0, p1))
        counts = np.maximum(0, (hi - lo + 1)).astype(np.int64)
        counts[p0 == p1] = 0
        total = int(counts.sum())
        if total == 0:
            continue
        ids = np.repeat(np.arange(m), counts)
        starts = np.concatenate(([0], np.cumsum(counts)))[:-1]
        offsets = np.arange(total) - np.repeat(starts, counts)
        grid = lo[ids] + offsets
        t = (grid - p0[ids]) / (p1[ids] - p0[ids])
        seg_ids.append(ids)
        t_vals.append(t)

    ids = np.concatenate(seg_ids)
    ts = np.concatenate(t_vals)
    order = np.lexsort((ts, ids))
    ids = ids[order]
    ts = np.clip(ts[order], 0.0, 1.0)

    same = ids[:-1] == ids[1:]
    ta, tb = ts[:-1], ts[1:]
    good = same & (tb - ta > 1e-12)
    ta, tb, sid = ta[good], tb[good], ids[:-1][good]
    tm = 0.5 * (ta + tb)

    dx = (x1 - x0)[sid]
    dy = (y1 - y0)[sid]
    bx, by = x0[sid], y0[sid]
    span = tb - ta

    xm = bx + dx * tm
    ym = by + dy * tm
    ix = np.floor(xm).astype(np.int64)
    iy = np.floor(ym).astype(np.int64)

    def corner_sum(tau):
        fx = (bx + dx * tau) - ix
        fy = (by + dy * tau) - iy
        return fx, fy

    fxa, fya = corner_sum(ta)
    fxm, fym = corner_sum(tm)
    fxb, fyb = corner_sum(tb)

    H, W = acc.shape
    for cx in (0, 1):
        wxa = fxa if cx else 1.0 - fxa
        wxm = fxm if cx else 1.0 - fxm
        wxb = fxb if cx else 1.0 - fxb
        for cy in (0, 1):
            wya = fya if cy else 1.0 - fya
            wym = fym if cy else 1.0 - fym
            wyb = fyb if cy else 1.0 - fyb
            w = span * (wxa * wya + 4.0 * wxm * wym + wxb * wyb) / 6.0
            px = ix + cx
            py = iy + cy
            ok = (px >= 0) & (px < W) & (py >= 0) & (py < H)
            np.add.at(acc, (py[ok], px[ok]), w[ok])


def _deposit_points(acc, xs, ys, weights):
    """Plain bilinear point deposit (used for single-sample degenerate frames)."""
    H, W = acc.shape
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    fx = xs - ix
    fy = ys - iy
    for cx, cy, w in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        px, py = ix + cx, iy + cy
        ok = (px >= 0) & (px < W) & (py >= 0) & (py < H)
        np.add.at(acc, (py[ok], px[ok]), (weights * w)[ok])
