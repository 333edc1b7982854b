"""Streak compositing, foreground sprites, backgrounds and GT masks.

A frame is composited as  I = clip( sum_k w_k shift_k(b_f * F)
+ (1 - sum_k w_k shift_k(M)) * B )  where (w_k, shift_k) come from a
unit-sum path PSF.  The "convolution" is realized as weighted sprite
splatting: identical result for a sparse PSF, and exact (a plain array
add) when the PSF is a single delta, which dense FFT convolution is not.

Sprites keep an odd side so their anchor pixel (side // 2) is an integer
grid position; sub-pixel placement is already encoded in the PSF's
bilinear weights.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image as PilImage
from scipy import ndimage

from .errors import ConfigError, DataError
from .synthgen import PathPSF
from .validation import as_image


@dataclass
class ForegroundSprite:
    """Premultiplied appearance F (h, w, 3) with matching alpha M (h, w).

    F <= M channel-wise (premultiplied), both in [0, 1], odd square side.
    diameter is the nominal ball width in px, not the canvas side.
    """

    F: np.ndarray
    M: np.ndarray
    diameter: float

    def __post_init__(self):
        if self.F.shape[:2] != self.M.shape:
            raise DataError("sprite F and M sizes differ")
        if self.F.shape[0] % 2 == 0 or self.F.shape[1] % 2 == 0:
            raise DataError("sprite side must be odd (integer anchor pixel)")

    @property
    def side(self):
        return self.F.shape[0]


@dataclass
class RenderParams:
    b_f: float = 1.0
    defocus_radius: float = 0.0
    sensor_noise_sigma: float = 0.0

    def validate(self):
        if self.b_f <= 0:
            raise ConfigError(f"b_f must be positive, got {self.b_f}")
        if self.defocus_radius < 0:
            raise ConfigError(f"defocus_radius must be >= 0, got {self.defocus_radius}")
        if self.sensor_noise_sigma < 0:
            raise ConfigError(f"sensor_noise_sigma must be >= 0, got {self.sensor_noise_sigma}")


@dataclass
class GtMask:
    mask: np.ndarray  # (H, W) float64 in {0.0, 1.0}
    frame_index: int


def ball_template(diameter=64, rim_brightness=0.55, supersample=8):
    """Anti-aliased shaded white ball: returns (base, alpha).

    base is premultiplied (zero outside the disc); shading falls from 1.0
    at the center to rim_brightness at the silhouette, a cheap sphere cue.
    """
    if diameter < 2:
        raise ConfigError(f"template diameter must be >= 2, got {diameter}")
    side = diameter + 1 if diameter % 2 == 0 else diameter + 2
    c = side // 2
    radius = diameter / 2.0
    n = side * supersample
    coords = (np.arange(n) + 0.5) / supersample - 0.5  # pixel-center grid
    dy = coords - c
    dx = coords - c
    r2 = dy[:, None] ** 2 + dx[None, :] ** 2
    inside = r2 <= radius * radius
    shade = np.zeros((n, n))
    shade[inside] = rim_brightness + (1.0 - rim_brightness) * np.sqrt(
        1.0 - r2[inside] / (radius * radius))
    block = (side, supersample, side, supersample)
    alpha = inside.astype(np.float64).reshape(block).mean(axis=(1, 3))
    base1 = shade.reshape(block).mean(axis=(1, 3))
    base = np.repeat(base1[:, :, None], 3, axis=2)
    return base, alpha


def load_template(path):
    """Read an RGBA template image: color channels become base, alpha M."""
    with PilImage.open(path) as im:
        if im.mode != "RGBA":
            raise DataError(f"template {path} must be RGBA, got mode {im.mode}")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr[:, :, :3], arr[:, :, 3]


def _resize_float_plane(plane, size):
    im = PilImage.fromarray(plane.astype(np.float32), mode="F")
    out = im.resize((size, size), PilImage.Resampling.BOX)
    return np.asarray(out, dtype=np.float64)


def tint_and_resize(base, alpha, color, diameter):
    """Tint a white-ball template and rescale it to the requested width.

    Area-averaging (BOX) resampling keeps total coverage mass proportional
    to sprite area.  Identity when the diameter already matches: no
    resampling round-trip is introduced.
    """
    base = as_image(base, channels=3, name="template base")
    alpha = as_image(alpha, channels=1, name="template alpha")
    if base.shape[:2] != alpha.shape:
        raise DataError("template base and alpha sizes differ")
    if diameter < 2:
        raise DataError(f"sprite diameter must be >= 2, got {diameter}")
    color = np.asarray(color, dtype=np.float64)
    if color.shape != (3,) or color.min() < 0 or color.max() > 1:
        raise DataError(f"color must be an RGB triple in [0,1], got {color!r}")

    side_old = base.shape[0]
    # The template's ball fills its canvas up to a sub-pixel rim margin, so
    # the usable width is the side minus one (odd sides) or two (even).
    d_old = side_old - 1 if side_old % 2 == 1 else side_old - 2
    if diameter == d_old:
        return ForegroundSprite(base * color[None, None, :], alpha.copy(), float(diameter))

    side_new = max(3, int(round(side_old * diameter / d_old)))
    planes = [
        _resize_float_plane(base[:, :, ch], side_new) for ch in range(3)
    ]
    m = _resize_float_plane(alpha, side_new)
    if side_new % 2 == 0:  # zero row+col keep mass, restore an odd side
        planes = [np.pad(p, ((0, 1), (0, 1))) for p in planes]
        m = np.pad(m, ((0, 1), (0, 1)))
    f = np.clip(np.stack(planes, axis=2), 0.0, 1.0) * color[None, None, :]
    m = np.clip(m, 0.0, 1.0)
    return ForegroundSprite(f, np.minimum(m, 1.0), float(diameter))


def median_background(frames):
    """Per-pixel per-channel median of 5 consecutive frames."""
    if len(frames) != 5:
        raise DataError(f"median background needs exactly 5 frames, got {len(frames)}")
    arrs = [as_image(f, channels=3, name=f"frame {i}") for i, f in enumerate(frames)]
    for a in arrs[1:]:
        if a.shape != arrs[0].shape:
            raise DataError("background frames must share one size")
    return np.median(np.stack(arrs), axis=0)


def _disc_kernel(radius):
    k = int(np.ceil(radius))
    yy, xx = np.mgrid[-k:k + 1, -k:k + 1]
    disc = (yy * yy + xx * xx) <= radius * radius
    kern = disc.astype(np.float64)
    return kern / kern.sum()


def _defocused(sprite, radius):
    if radius <= 0:
        return sprite
    kern = _disc_kernel(radius)
    pad = kern.shape[0] // 2
    f = np.pad(sprite.F, ((pad, pad), (pad, pad), (0, 0)))
    m = np.pad(sprite.M, ((pad, pad), (pad, pad)))
    f = np.stack([ndimage.convolve(f[:, :, c], kern, mode="constant")
                  for c in range(3)], axis=2)
    m = ndimage.convolve(m, kern, mode="constant")
    return ForegroundSprite(f, m, sprite.diameter)


def _splat_plane(psf, plane, out):
    """out += sum_k w_k shift_k(plane), plane anchored at its center pixel."""
    sh, sw = plane.shape[:2]
    ry, rx = sh // 2, sw // 2
    H, W = out.shape[:2]
    for y, x, w in zip(psf.ys, psf.xs, psf.weights):
        y0, x0 = int(y) - ry, int(x) - rx
        ys0, xs0 = max(0, -y0), max(0, -x0)
        ys1, xs1 = min(sh, H - y0), min(sw, W - x0)
        if ys0 >= ys1 or xs0 >= xs1:
            continue
        out[y0 + ys0:y0 + ys1, x0 + xs0:x0 + xs1] += w * plane[ys0:ys1, xs0:xs1]
    return out


def splat_flux(sprite, psf, b_f=1.0):
    """Pre-clip foreground field and coverage: (sum_k w_k b_f F, sum_k w_k M).

    Exposed separately so energy accounting can be checked before the
    compositing clip is applied.
    """
    H, W = psf.shape
    flux = _splat_plane(psf, b_f * sprite.F, np.zeros((H, W, 3)))
    cover = _splat_plane(psf, sprite.M, np.zeros((H, W)))
    return flux, cover


def synthesize_frame(background, sprite, psf, params, rng=None):
    """Composite one streaked foreground over a background frame.

    Returns (I, alpha) with I clipped to [0, 1] as the final step and
    alpha the accumulated coverage.  An empty PSF leaves the background
    untouched.
    """
    B = as_image(background, channels=3, name="background")
    params.validate()
    if psf.shape != B.shape[:2]:
        raise DataError(f"PSF grid {psf.shape} does not match background {B.shape[:2]}")
    if psf.is_empty:
        return B.copy(), np.zeros(B.shape[:2])
    if sprite.side >= min(B.shape[:2]):
        raise DataError(f"sprite side {sprite.side} does not fit the {B.shape[:2]} frame")

    eff = _defocused(sprite, params.defocus_radius)
    flux, cover = splat_flux(eff, psf, params.b_f)
    alpha = np.clip(cover, 0.0, 1.0)
    out = flux + (1.0 - alpha)[:, :, None] * B
    if params.sensor_noise_sigma > 0:
        gen = rng if rng is not None else np.random.default_rng()
        out = out + gen.normal(0.0, params.sensor_noise_sigma, out.shape)
    return np.clip(out, 0.0, 1.0), alpha


def make_gt_mask(psf_mid, M, threshold=0.1):
    """Binary ground-truth mask: coverage above `threshold` of its peak."""
    if not (0.0 < threshold < 1.0):
        raise ConfigError(f"gt threshold must be in (0, 1), got {threshold}")
    H, W = psf_mid.shape
    if psf_mid.is_empty:
        return GtMask(np.zeros((H, W)), psf_mid.frame_index)
    if M.shape[0] % 2 == 0 or M.shape[1] % 2 == 0:
        raise DataError("alpha plane side must be odd (integer anchor pixel)")
    cover = _splat_plane(psf_mid, M, np.zeros((H, W)))
    peak = cover.max()
    if peak <= 0:
        return GtMask(np.zeros((H, W)), psf_mid.frame_index)
    return GtMask((cover > threshold * peak).astype(np.float64), psf_mid.frame_index)


def delta_psf(y, x, shape, frame_index=0):
    """Single-pixel unit PSF, mostly for tests and templates."""
    return PathPSF(frame_index, shape,
                   np.array([y], dtype=np.int64),
                   np.array([x], dtype=np.int64),
                   np.array([1.0]))
