"""Rubber-sheet unwrapping to 64x512 polar rasters, alignment, patch curation.

Angular origin: column 0 is the ray along +x from the pupil centre and the
angle grows towards +y (image rows grow downward), theta = 2*pi*col/512.
Row 0 is at the pupil boundary, row 63 at the iris boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import DegenerateCorners, SegmentationOutOfBounds
from .imaging import GrayImage, load_gray, save_gray
from .segmentation import SegmentationResult

POLAR_ROWS = 64
POLAR_COLS = 512
PATCH_COLS = POLAR_COLS // 2
DEFAULT_MAX_OCCLUSION = 0.2


@dataclass(frozen=True)
class CaptureMeta:
    subject_id: str = ""
    eye: str = "L"
    pmi_hours: float = 0.0
    capture_id: str = ""

    def __post_init__(self):
        if self.eye not in ("L", "R"):
            raise ValueError(f"eye must be 'L' or 'R', got {self.eye!r}")
        if not self.pmi_hours >= 0:
            raise ValueError(f"pmi_hours must be >= 0, got {self.pmi_hours}")

    @property
    def eye_key(self):
        return (self.subject_id, self.eye)

    def to_dict(self):
        return {"capture_id": self.capture_id, "subject_id": self.subject_id,
                "eye": self.eye, "pmi_hours": float(self.pmi_hours)}


def _freeze(texture, mask, shape):
    t = np.array(texture, dtype=np.float64)
    m = (np.asarray(mask) != 0).astype(np.uint8)
    if t.shape != shape or m.shape != shape:
        raise ValueError(f"expected texture and mask of shape {shape}, got {t.shape}, {m.shape}")
    t.setflags(write=False)
    m.setflags(write=False)
    return t, m


@dataclass(frozen=True, eq=False)
class PolarIris:
    texture: np.ndarray  # (64, 512) floats in [0, 1]
    mask: np.ndarray  # (64, 512) 0/1
    meta: CaptureMeta = field(default_factory=CaptureMeta)

    def __post_init__(self):
        t, m = _freeze(self.texture, self.mask, (POLAR_ROWS, POLAR_COLS))
        object.__setattr__(self, "texture", t)
        object.__setattr__(self, "mask", m)

    def shifted(self, shift: int) -> "PolarIris":
        """Circular column shift: out[:, c] = in[:, c - shift]."""
        return replace(self, texture=np.roll(self.texture, shift, axis=1),
                       mask=np.roll(self.mask, shift, axis=1))

    def save(self, texture_path, mask_path):
        save_gray(np.rint(np.clip(self.texture, 0, 1) * 255).astype(np.uint8), texture_path)
        save_gray(self.mask * np.uint8(255), mask_path)

    @classmethod
    def load(cls, texture_path, mask_path=None, meta=None) -> "PolarIris":
        tex = load_gray(texture_path).as_float() / 255.0
        if mask_path is None:
            mask = np.ones_like(tex, dtype=np.uint8)
        else:
            mask = (load_gray(mask_path).data > 127).astype(np.uint8)
        return cls(tex, mask, meta or CaptureMeta())


@dataclass(frozen=True, eq=False)
class IrisPatch:
    texture: np.ndarray  # (64, 256)
    mask: np.ndarray
    side: str
    meta: CaptureMeta = field(default_factory=CaptureMeta)

    def __post_init__(self):
        t, m = _freeze(self.texture, self.mask, (POLAR_ROWS, PATCH_COLS))
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        object.__setattr__(self, "texture", t)
        object.__setattr__(self, "mask", m)


def occlusion_fraction(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask == 0)) / mask.size


def _ray_to_iris(pcx, pcy, ux, uy, iris):
    # distance t along (ux, uy) from the pupil centre to the iris circle
    dx, dy = pcx - iris.cx, pcy - iris.cy
    b = ux * dx + uy * dy
    c = dx * dx + dy * dy - iris.r ** 2
    return -b + np.sqrt(b * b - c)


def unwrap(img: GrayImage, seg: SegmentationResult, meta: CaptureMeta | None = None) -> PolarIris:
    """Sample the annulus between the pupil and iris circles onto 64x512."""
    if seg.mask.shape != img.data.shape:
        raise ValueError("segmentation mask does not match the image size")
    theta = 2 * np.pi * np.arange(POLAR_COLS) / POLAR_COLS
    frac = (np.arange(POLAR_ROWS) + 0.5) / POLAR_ROWS
    ux, uy = np.cos(theta), np.sin(theta)
    p = seg.pupil
    outer = _ray_to_iris(p.cx, p.cy, ux, uy, seg.iris)
    radius = p.r + frac[:, None] * (outer[None, :] - p.r)
    xs = p.cx + radius * ux[None, :]
    ys = p.cy + radius * uy[None, :]

    h, w = img.data.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    if inside.mean() < 0.05:
        raise SegmentationOutOfBounds("more than 95% of polar samples fall outside the image")
    texture = ndimage.map_coordinates(img.as_float(), [ys, xs], order=1, mode="nearest") / 255.0
    yi = np.clip(np.rint(ys).astype(np.int64), 0, h - 1)
    xi = np.clip(np.rint(xs).astype(np.int64), 0, w - 1)
    mask = seg.mask[yi, xi] & inside
    texture = np.where(inside, np.clip(texture, 0.0, 1.0), 0.0)
    return PolarIris(texture, mask, meta or CaptureMeta())


def corner_shift(corners, reference_angle: float = 0.0) -> int:
    """Columns by which the eye axis is rotated away from the reference."""
    (x1, y1), (x2, y2) = corners
    if x1 == x2 and y1 == y2:
        raise DegenerateCorners("eye corners coincide")
    phi = math.atan2(y2 - y1, x2 - x1)
    return math.floor(POLAR_COLS * (phi - reference_angle) / (2 * math.pi) + 0.5)


def align(p: PolarIris, corners, reference_angle: float = 0.0) -> PolarIris:
    return p.shifted(-corner_shift(corners, reference_angle))


def curate_patches(p: PolarIris, max_occlusion: float = DEFAULT_MAX_OCCLUSION) -> list[IrisPatch]:
    """Split into left/right halves, keeping halves that are clean enough."""
    out = []
    for side, sl in (("left", slice(0, PATCH_COLS)), ("right", slice(PATCH_COLS, POLAR_COLS))):
        m = p.mask[:, sl]
        if occlusion_fraction(m) <= max_occlusion:
            out.append(IrisPatch(p.texture[:, sl], m, side, p.meta))
    return out
