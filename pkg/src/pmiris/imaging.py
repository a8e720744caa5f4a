"""Raster types, PGM/PNG I/O and the wrap-x / clamp-y convolution.

Polar iris rasters are periodic along the angular (x) axis and bounded
along the radial (y) axis, so every convolution in the toolkit wraps
columns circularly and clamps rows to the border.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from PIL import Image

from .errors import InvalidParam, UnsupportedFormat

PROVENANCES = ("gabor", "learned")


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel 8-bit image, stored as an (height, width) uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"GrayImage needs a non-empty 2D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("GrayImage values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class Kernel2D:
    weights: np.ndarray
    provenance: str = "gabor"
    label: str = ""

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidParam(f"kernel weights must be 2D, got shape {w.shape}")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise InvalidParam(f"kernel dims must be odd, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidParam("kernel weights must be finite")
        if self.provenance not in PROVENANCES:
            raise InvalidParam(f"unknown provenance {self.provenance!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, Kernel2D)
            and self.provenance == other.provenance
            and self.label == other.label
            and np.array_equal(self.weights, other.weights)
        )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "provenance": self.provenance,
            "rows": self.rows,
            "cols": self.cols,
            "weights": [float(v) for v in self.weights.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Kernel2D":
        w = np.asarray(d["weights"], dtype=np.float64)
        if w.size != d["rows"] * d["cols"]:
            raise InvalidParam(f"kernel {d.get('label')!r}: weights length != rows*cols")
        return cls(w.reshape(d["rows"], d["cols"]), d["provenance"], d["label"])


# ---------------------------------------------------------------------------
# I/O


def _read_pgm(raw: bytes) -> np.ndarray:
    # header tokens may be separated by arbitrary whitespace and comments
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UnsupportedFormat("truncated PGM header")
        tokens.append(int(raw[start:pos]))
    pos += 1
    width, height, maxval = tokens
    if maxval != 255:
        raise UnsupportedFormat(f"PGM maxval {maxval} (only 8-bit supported)")
    payload = raw[pos:pos + width * height]
    if len(payload) != width * height:
        raise UnsupportedFormat("truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def load_gray(path) -> GrayImage:
    """Read an 8-bit PGM (P5) or PNG; colour PNGs are averaged over RGB."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = path.read_bytes()
    if raw[:2] == b"P5":
        return GrayImage(_read_pgm(raw))
    if raw[:8] != b"\x89PNG\r\n\x1a\n":
        raise UnsupportedFormat(f"{path}: not a PGM (P5) or PNG file")
    with Image.open(path) as im:
        mode = im.mode
        if mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
        elif mode in ("RGB", "RGBA", "LA", "P", "1"):
            if mode == "LA":
                arr = np.asarray(im.getchannel("L"), dtype=np.uint8)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = np.round(rgb.mean(axis=2)).astype(np.uint8)
        else:
            raise UnsupportedFormat(f"{path}: PNG mode {mode} is not 8-bit")
    return GrayImage(arr)


def save_gray(img: GrayImage | np.ndarray, path) -> None:
    """Write as PGM or PNG depending on the suffix; the write is atomic."""
    data = img.data if isinstance(img, GrayImage) else GrayImage(img).data
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        h, w = data.shape
        tmp.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())
    elif suffix == ".png":
        Image.fromarray(data, mode="L").save(tmp, format="PNG")
    else:
        raise UnsupportedFormat(f"cannot write {suffix!r}; use .pgm or .png")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Convolution


def _weights(k) -> np.ndarray:
    return k.weights if isinstance(k, Kernel2D) else np.asarray(k, dtype=np.float64)


def pad_rows(images: np.ndarray, pad: int) -> np.ndarray:
    """Replicate the first/last row ``pad`` times (vertical clamp)."""
    if pad == 0:
        return images
    widths = [(0, 0)] * (images.ndim - 2) + [(pad, pad), (0, 0)]
    return np.pad(images, widths, mode="edge")


def kernel_layout(kernels, height: int, width: int, pad: int, dtype=np.float64) -> np.ndarray:
    """Place kernels on a (height + 2*pad, width) canvas for FFT correlation.

    Tap (i, j) goes to row ``pad - cy + i`` and column ``(j - cx) mod width``;
    taps that wrap onto the same column accumulate, which is exactly the
    circular-x rule for kernels wider than the image.
    """
    canvas = np.zeros((len(kernels), height + 2 * pad, width), dtype=dtype)
    for n, k in enumerate(kernels):
        w = _weights(k)
        r, c = w.shape
        cy, cx = r // 2, c // 2
        if cy > pad:
            raise ValueError("row padding smaller than kernel half-height")
        cols = (np.arange(c) - cx) % width
        np.add.at(canvas[n, pad - cy:pad - cy + r], (slice(None), cols), w)
    return canvas


def correlate_bank(images: np.ndarray, kernels) -> np.ndarray:
    """Apply every kernel to every image.

    ``images`` has shape (..., H, W); the result has shape (..., K, H, W).
    Uses circular FFT correlation on row-padded images, which equals the
    direct wrap-x / clamp-y sum up to rounding.
    """
    images = np.asarray(images, dtype=np.float64)
    h, w = images.shape[-2:]
    pad = max(_weights(k).shape[0] // 2 for k in kernels)
    padded = pad_rows(images, pad)
    shape = (h + 2 * pad, w)
    img_hat = sfft.rfft2(padded)
    ker_hat = np.conj(sfft.rfft2(kernel_layout(kernels, h, w, pad)))
    out = sfft.irfft2(img_hat[..., None, :, :] * ker_hat, s=shape)
    return out[..., :h, :]


def convolve2d_wrap_x(img, k) -> np.ndarray:
    """out[y, x] = sum_ij k[i, j] * img[clamp(y + i - cy), wrap(x + j - cx)]."""
    if isinstance(img, GrayImage):
        img = img.as_float()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("convolve2d_wrap_x expects a non-empty 2D array")
    return correlate_bank(img, [k])[0]


def roll_columns(arr: np.ndarray, shift: int) -> np.ndarray:
    """Circular shift along the last axis: out[..., c] = arr[..., c - shift]."""
    return np.roll(arr, shift, axis=-1)
