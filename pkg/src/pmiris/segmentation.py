"""Pupil/iris circle fitting by gradient-directed Hough voting, plus masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, InvalidConfig, NoCircleFound
from .imaging import GrayImage, load_gray


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"circle radius must be positive, got {self.r}")

    def to_dict(self):
        return {"cx": float(self.cx), "cy": float(self.cy), "r": float(self.r)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["cx"]), float(d["cy"]), float(d["r"]))


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    pupil: Circle
    iris: Circle
    mask: np.ndarray  # uint8 0/1, same shape as the source image

    def __post_init__(self):
        if not self.pupil.r < self.iris.r:
            raise ValueError("pupil radius must be smaller than iris radius")
        d = np.hypot(self.pupil.cx - self.iris.cx, self.pupil.cy - self.iris.cy)
        if d >= self.iris.r:
            raise ValueError("pupil centre must lie inside the iris circle")
        m = (np.asarray(self.mask) != 0).astype(np.uint8)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    def to_dict(self):
        return {"pupil": self.pupil.to_dict(), "iris": self.iris.to_dict(),
                "height": int(self.mask.shape[0]), "width": int(self.mask.shape[1])}


@dataclass(frozen=True)
class HoughConfig:
    r_min: int = 10
    r_max: int = 60
    edge_threshold: float = 40.0
    accumulator_step: float = 1.0
    # votes per unit circumference a peak needs
    min_votes: float = 0.03
    min_radius_gap: float = 3.0
    smoothing: float = 1.5  # Gaussian sigma applied before Sobel
    accumulator_blur: float = 1.0
    edge_band: float = 4.0  # edges this close to the first circle are not reused

    def validate(self, width, height):
        if not (self.r_min >= 1 and self.r_min < self.r_max):
            raise InvalidConfig(f"need 1 <= r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.r_max > min(width, height) / 2:
            raise InvalidConfig(f"r_max {self.r_max} exceeds half the image size")
        if self.accumulator_step <= 0 or self.edge_threshold < 0:
            raise InvalidConfig("accumulator_step must be > 0 and edge_threshold >= 0")


def _edges(img: np.ndarray, cfg: HoughConfig):
    """Thinned Sobel edges: (x, y, unit gradient x, unit gradient y, magnitude).

    Pixels are kept only where the magnitude peaks along the gradient, so a
    boundary votes from its steepest point rather than from a band whose
    centre drifts towards the less textured side.
    """
    if cfg.smoothing > 0:
        img = ndimage.gaussian_filter(img, cfg.smoothing, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    ys, xs = np.nonzero(mag > cfg.edge_threshold)
    if len(xs) == 0:
        raise NoCircleFound("no edge pixels above edge_threshold")
    m = mag[ys, xs]
    ux, uy = gx[ys, xs] / m, gy[ys, xs] / m
    ahead = ndimage.map_coordinates(mag, [ys + uy, xs + ux], order=1, mode="nearest")
    behind = ndimage.map_coordinates(mag, [ys - uy, xs - ux], order=1, mode="nearest")
    peak = (m >= ahead) & (m > behind)
    return xs[peak], ys[peak], ux[peak], uy[peak], m[peak]


def _accumulate(edges, shape, cfg: HoughConfig):
    # each edge pixel votes, weighted by gradient magnitude, at the centres
    # lying r along and against its gradient (polarity-agnostic)
    xs, ys, ux, uy, mag = edges
    step = cfg.accumulator_step
    radii = np.arange(cfg.r_min, cfg.r_max + 1e-9, step)
    h, w = shape
    ny, nx = int(np.floor((h - 1) / step)) + 1, int(np.floor((w - 1) / step)) + 1
    acc = np.zeros(ny * nx * len(radii), dtype=np.float64)
    weight = np.broadcast_to(mag[:, None] / np.median(mag), (len(xs), len(radii)))
    ir = np.broadcast_to(np.arange(len(radii)), weight.shape)
    for sign in (1.0, -1.0):
        cx = xs[:, None] - sign * radii[None, :] * ux[:, None]
        cy = ys[:, None] - sign * radii[None, :] * uy[:, None]
        ix, iy = np.rint(cx / step).astype(np.int64), np.rint(cy / step).astype(np.int64)
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        flat = (iy[ok] * nx + ix[ok]) * len(radii) + ir[ok]
        acc += np.bincount(flat, weights=weight[ok], minlength=acc.size)
    acc = acc.reshape(ny, nx, len(radii))
    if cfg.accumulator_blur > 0:
        acc = ndimage.gaussian_filter(acc, (cfg.accumulator_blur, cfg.accumulator_blur, 0),
                                      mode="constant")
    return acc / (2 * np.pi * radii[None, None, :]), radii


def _refine(score, radii, step, iy, ix, ir):
    ny, nx, nr = score.shape
    sl = tuple(slice(max(i - 1, 0), min(i + 2, n)) for i, n in zip((iy, ix, ir), (ny, nx, nr)))
    win = np.clip(score[sl], 0.0, None)
    gy, gx, gr = np.meshgrid(*(np.arange(s.start, s.stop) for s in sl), indexing="ij")
    wsum = win.sum()
    cy = (gy * win).sum() / wsum * step
    cx = (gx * win).sum() / wsum * step
    r = radii[0] + (gr * win).sum() / wsum * step
    return Circle(float(cx), float(cy), float(r))


def find_boundaries(img: GrayImage, cfg: HoughConfig = HoughConfig()):
    """Return (pupil, iris) circles.

    The strongest circle is found first. Its edge pixels are then removed
    and the second circle is the strongest one that nests with it (inside
    or around) and differs in radius by more than ``cfg.min_radius_gap``.
    The smaller of the two is the pupil.
    """
    cfg.validate(img.width, img.height)
    shape = (img.height, img.width)
    step = cfg.accumulator_step
    edges = _edges(img.as_float(), cfg)

    score, radii = _accumulate(edges, shape, cfg)
    iy, ix, ir = np.unravel_index(np.argmax(score), score.shape)
    if score[iy, ix, ir] < cfg.min_votes:
        raise NoCircleFound(f"accumulator peak {score[iy, ix, ir]:.3f} below {cfg.min_votes}")
    first = _refine(score, radii, step, iy, ix, ir)

    xs, ys = edges[0], edges[1]
    far = np.abs(np.hypot(xs - first.cx, ys - first.cy) - first.r) > cfg.edge_band
    if not far.any():
        raise NoCircleFound("no edges left after removing the first circle")
    score, _ = _accumulate(tuple(e[far] for e in edges), shape, cfg)

    ny, nx, _ = score.shape
    yy = np.arange(ny)[:, None, None] * step
    xx = np.arange(nx)[None, :, None] * step
    rr = radii[None, None, :]
    dist = np.hypot(yy - first.cy, xx - first.cx)
    nested = np.where(rr < first.r, dist + rr < first.r, dist + first.r < rr)
    allowed = nested & (np.abs(rr - first.r) > cfg.min_radius_gap)
    masked = np.where(allowed, score, 0.0)
    jy, jx, jr = np.unravel_index(np.argmax(masked), masked.shape)
    if not masked[jy, jx, jr] >= cfg.min_votes:
        raise NoCircleFound("no second circle nested with the strongest one")
    second = _refine(masked, radii, step, jy, jx, jr)

    pupil, iris = sorted((first, second), key=lambda c: c.r)
    return pupil, iris


def default_mask(pupil: Circle, iris: Circle, dims) -> np.ndarray:
    """1 strictly outside the pupil and inside-or-on the iris circle."""
    w, h = dims
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dp = (xx - pupil.cx) ** 2 + (yy - pupil.cy) ** 2
    di = (xx - iris.cx) ** 2 + (yy - iris.cy) ** 2
    return ((dp > pupil.r ** 2) & (di <= iris.r ** 2)).astype(np.uint8)


def load_mask(path, expected_dims) -> np.ndarray:
    """Read an external mask (255 = valid texture); ``expected_dims`` is (w, h)."""
    img = load_gray(path)
    if (img.width, img.height) != tuple(expected_dims):
        raise DimensionMismatch(
            f"mask is {img.width}x{img.height}, expected {expected_dims[0]}x{expected_dims[1]}")
    return (img.data > 127).astype(np.uint8)


def segment(img: GrayImage, cfg: HoughConfig = HoughConfig(), mask_path=None) -> SegmentationResult:
    pupil, iris = find_boundaries(img, cfg)
    mask = default_mask(pupil, iris, (img.width, img.height))
    if mask_path is not None:
        mask &= load_mask(mask_path, (img.width, img.height))
    return SegmentationResult(pupil, iris, mask)
