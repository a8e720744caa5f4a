"""Deterministic synthetic polar irises with a parametric post-mortem decay.

Each eye gets a band-pass noise texture (its identity). A capture taken h
hours post-mortem is derived from it by, in order: a smooth radial warp
(wrinkling), Gaussian blur (stronger along the angle than along the
radius), contrast compression toward mid-gray, additive noise, an eyelid
band growing from the outer boundary, and a random rotation recorded
through matching eye-corner annotations. Every eye also draws a log-normal
multiplier on h, so some eyes decay faster than others. Every random draw
comes from a stream seeded by (master seed, subject, eye, capture).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidConfig
from .normalization import POLAR_COLS, POLAR_ROWS, CaptureMeta, PolarIris, corner_shift
from .segmentation import Circle

EYES = ("L", "R")
DEFAULT_PMI = (5, 10, 16, 22, 30, 40, 50, 60, 80, 110, 160, 210, 290, 369)


@dataclass(frozen=True)
class DecayModel:
    blur_per_hour: float = 0.03
    contrast_loss_per_hour: float = 0.002
    occlusion_growth_per_hour: float = 0.06
    wrinkle_amplitude_per_hour: float = 0.04
    noise_per_hour: float = 0.0003  # std of additive speckle, in [0, 1] intensity units
    sensor_noise: float = 0.12  # pmi-independent noise std, present in every capture
    rate_spread: float = 1.0  # log-normal sigma of a per-eye multiplier on every rate
    radial_blur_ratio: float = 0.25  # radial blur sigma relative to the angular one

    def validate(self):
        if any(v < 0 for v in asdict(self).values()):
            raise InvalidConfig("decay rates must be >= 0")


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 10
    captures_per_eye: tuple = DEFAULT_PMI
    seed: int = 0
    decay: DecayModel = field(default_factory=DecayModel)
    rotation_jitter: float = 0.06  # radians
    subject_offset: int = 0  # first subject number, for subject-disjoint splits
    texture_contrast: float = 0.16
    band: tuple = (0.8, 3.0)  # band-pass Gaussian sigmas (fine, coarse), pixels

    def validate(self):
        self.decay.validate()
        pmi = list(self.captures_per_eye)
        if self.n_subjects < 2:
            raise InvalidConfig("need at least 2 subjects")
        if len(pmi) < 2:
            raise InvalidConfig("need at least 2 captures per eye")
        if any(h < 0 for h in pmi) or pmi != sorted(pmi):
            raise InvalidConfig("captures_per_eye must be sorted, non-negative PMI hours")
        if self.rotation_jitter < 0:
            raise InvalidConfig("rotation_jitter must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["captures_per_eye"] = list(self.captures_per_eye)
        d["band"] = list(self.band)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "decay" in d:
            d["decay"] = DecayModel(**d["decay"])
        if "captures_per_eye" in d:
            d["captures_per_eye"] = tuple(d["captures_per_eye"])
        if "band" in d:
            d["band"] = tuple(d["band"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SynthCapture:
    polar: PolarIris
    corners: tuple
    rotation_columns: int


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def base_texture(cfg: SynthConfig, subject: int, eye_index: int) -> np.ndarray:
    rng = _rng(cfg.seed, subject, eye_index, 0)
    noise = rng.standard_normal((POLAR_ROWS, POLAR_COLS))
    fine, coarse = cfg.band
    mode = ("nearest", "wrap")
    t = ndimage.gaussian_filter(noise, fine, mode=mode) - ndimage.gaussian_filter(noise, coarse, mode=mode)
    t = (t - t.mean()) / t.std()
    return 0.5 + cfg.texture_contrast * t


def _warp(tex, amplitude, rng):
    if amplitude <= 0:
        return tex
    cols = np.arange(POLAR_COLS) * 2 * np.pi / POLAR_COLS
    disp = np.zeros(POLAR_COLS)
    for freq in (2, 3, 5, 7):
        disp += rng.standard_normal() * np.sin(freq * cols + rng.uniform(0, 2 * np.pi))
    disp *= amplitude / max(np.abs(disp).max(), 1e-12)
    rows = np.arange(POLAR_ROWS, dtype=np.float64)[:, None]
    # displacement fades towards the pupil: the outer iris wrinkles most
    yy = np.clip(rows + disp[None, :] * (rows + 0.5) / POLAR_ROWS, 0, POLAR_ROWS - 1)
    xx = np.broadcast_to(np.arange(POLAR_COLS, dtype=np.float64), yy.shape)
    return ndimage.map_coordinates(tex, [yy, xx], order=1, mode="grid-wrap")


def corners_for(rotation_columns: int, reference_angle=0.0, center=(320.0, 240.0), half=150.0):
    phi = reference_angle + 2 * np.pi * rotation_columns / POLAR_COLS
    cx, cy = center
    return ((cx - half * math.cos(phi), cy - half * math.sin(phi)),
            (cx + half * math.cos(phi), cy + half * math.sin(phi)))


def make_capture(cfg: SynthConfig, subject: int, eye_index: int, capture_index: int,
                 base: np.ndarray) -> SynthCapture:
    h = float(cfg.captures_per_eye[capture_index])
    d = cfg.decay
    rng = _rng(cfg.seed, subject, eye_index, capture_index + 1)
    eye_rng = _rng(cfg.seed, subject, eye_index, 10_000)
    # eyelid sits on one side of the polar image, fixed per eye
    lid_center = int(eye_rng.choice([POLAR_COLS // 4, 3 * POLAR_COLS // 4]))
    # some eyes decay faster than others
    h *= math.exp(d.rate_spread * eye_rng.standard_normal()) if d.rate_spread > 0 else 1.0

    tex = _warp(base, d.wrinkle_amplitude_per_hour * h, rng)
    sigma = d.blur_per_hour * h
    if sigma > 0:
        tex = ndimage.gaussian_filter(tex, (sigma * d.radial_blur_ratio, sigma),
                                      mode=("nearest", "wrap"))
    tex = 0.5 + (tex - 0.5) * max(0.0, 1.0 - d.contrast_loss_per_hour * h)
    noise = math.hypot(d.noise_per_hour * h, d.sensor_noise)
    if noise > 0:
        tex = tex + rng.normal(0.0, noise, tex.shape)

    mask = np.ones((POLAR_ROWS, POLAR_COLS), dtype=np.uint8)
    lid_rows = min(POLAR_ROWS, int(math.floor(d.occlusion_growth_per_hour * h)))
    if lid_rows > 0:
        cols = (np.arange(-80, 80) + lid_center) % POLAR_COLS
        mask[POLAR_ROWS - lid_rows:, cols] = 0
        tex[POLAR_ROWS - lid_rows:, cols] = 0.9

    rot = 0
    if cfg.rotation_jitter > 0:
        rot = int(round(rng.uniform(-cfg.rotation_jitter, cfg.rotation_jitter)
                        * POLAR_COLS / (2 * np.pi)))
    corners = corners_for(rot)
    rot = corner_shift(corners)
    tex = np.roll(np.rint(np.clip(tex, 0, 1) * 255) / 255.0, rot, axis=1)
    mask = np.roll(mask, rot, axis=1)
    meta = CaptureMeta(subject_id=f"S{subject:03d}", eye=EYES[eye_index],
                       pmi_hours=float(cfg.captures_per_eye[capture_index]),
                       capture_id=f"S{subject:03d}{EYES[eye_index]}_{capture_index:02d}")
    return SynthCapture(PolarIris(tex, mask, meta), corners, rot)


def generate(cfg: SynthConfig) -> list[SynthCapture]:
    cfg.validate()
    out = []
    for s in range(cfg.subject_offset, cfg.subject_offset + cfg.n_subjects):
        for e in range(len(EYES)):
            base = base_texture(cfg, s, e)
            for c in range(len(cfg.captures_per_eye)):
                out.append(make_capture(cfg, s, e, c, base))
    return out


def write_dataset(captures, out_dir, cfg: SynthConfig | None = None, reference_angle=0.0) -> Path:
    """Write PGM textures/masks and ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for c in captures:
        m = c.polar.meta
        img, msk = f"images/{m.capture_id}.pgm", f"images/{m.capture_id}_mask.pgm"
        c.polar.save(out_dir / img, out_dir / msk)
        entries.append({**m.to_dict(), "image_path": img, "mask_path": msk,
                        "corners": [list(map(float, p)) for p in c.corners], "kind": "polar"})
    manifest = {"reference_angle": reference_angle, "entries": entries}
    if cfg is not None:
        manifest["synth_config"] = cfg.to_dict()
    path = out_dir / "manifest.json"
    tmp = path.with_name("manifest.json.tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def render_cartesian(texture: np.ndarray, pupil: Circle, iris: Circle, size=(160, 160),
                     rotation=0.0, pupil_value=0.08, sclera_value=0.85) -> np.ndarray:
    """Project a polar texture back onto a Cartesian eye image (uint8).

    Inverts the rubber-sheet sampling of :func:`normalization.unwrap`; the
    eye is rotated by ``rotation`` radians about the pupil centre.
    """
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - pupil.cx, yy - pupil.cy
    rho = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    ux, uy = np.cos(theta), np.sin(theta)
    ox, oy = pupil.cx - iris.cx, pupil.cy - iris.cy
    b = ux * ox + uy * oy
    outer = -b + np.sqrt(b * b - (ox * ox + oy * oy - iris.r ** 2))
    frac = (rho - pupil.r) / (outer - pupil.r)
    row = frac * POLAR_ROWS - 0.5
    col = ((theta - rotation) / (2 * np.pi) * POLAR_COLS) % POLAR_COLS
    padded = np.pad(texture, ((1, 1), (0, 0)), mode="edge")
    vals = ndimage.map_coordinates(padded, [np.clip(row + 1, 0, POLAR_ROWS + 1), col], order=1,
                                   mode="grid-wrap")
    img = np.where(rho <= pupil.r, pupil_value, np.where(frac <= 1.0, vals, sclera_value))
    return np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)
