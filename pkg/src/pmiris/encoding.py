"""Gabor/learned filter banks and bit-packed iris codes.

In memory a bit plane of shape (H, W) is stored column-major as
(W, ceil(H/64)) uint64 words: bit ``r % 64`` of word ``r // 64`` in column
``c`` holds row ``r``. A circular shift of the code along the angular axis
is then a plain ``np.roll`` over the column axis.

PMIC file layout (little-endian)::

    b"PMIC" | version u8 | F u8 | width u16 | height u16
    mask plane  : ceil(H*W/8) bytes, row-major, LSB-first bit order
    F bit planes: same packing, in bank order
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, IndexOutOfRange, InvalidParam, UnsupportedFormat
from .imaging import Kernel2D, correlate_bank
from .normalization import CaptureMeta

PMIC_MAGIC = b"PMIC"
PMIC_VERSION = 1
_HEADER = struct.Struct("<4sBBHH")


def gabor_kernel(rows, cols, wavelength, orientation=0.0, sigma=None, aspect=1.0, phase=0.0,
                 label="", provenance="gabor") -> Kernel2D:
    if rows % 2 == 0 or cols % 2 == 0 or rows < 1 or cols < 1:
        raise InvalidParam(f"kernel dims must be odd and positive, got {rows}x{cols}")
    if sigma is None:
        sigma = cols / 5
    if not wavelength > 0 or not sigma > 0:
        raise InvalidParam("wavelength and sigma must be positive")
    y, x = np.mgrid[-(rows // 2):rows // 2 + 1, -(cols // 2):cols // 2 + 1].astype(np.float64)
    xr = x * math.cos(orientation) + y * math.sin(orientation)
    yr = -x * math.sin(orientation) + y * math.cos(orientation)
    w = np.exp(-(xr ** 2 + aspect ** 2 * yr ** 2) / (2 * sigma ** 2))
    w *= np.cos(2 * np.pi * xr / wavelength + phase)
    w -= w.mean()
    return Kernel2D(w, provenance, label or f"gabor-{rows}x{cols}-{phase:.3f}")


@dataclass(frozen=True)
class FilterBank:
    kernels: tuple
    version: str = "1"

    def __post_init__(self):
        ks = tuple(self.kernels)
        if not ks:
            raise InvalidParam("filter bank must not be empty")
        labels = [k.label for k in ks]
        if len(set(labels)) != len(labels):
            raise InvalidParam(f"duplicate kernel labels in {labels}")
        object.__setattr__(self, "kernels", ks)

    def __len__(self):
        return len(self.kernels)

    @property
    def labels(self):
        return [k.label for k in self.kernels]

    @property
    def border(self) -> int:
        """Rows at top and bottom treated as unreliable (half the tallest kernel)."""
        return max(k.rows for k in self.kernels) // 2

    def with_kernels(self, kernels) -> "FilterBank":
        return FilterBank(tuple(kernels), self.version)

    def to_json(self) -> str:
        return json.dumps([k.to_dict() for k in self.kernels], indent=1)

    @classmethod
    def from_json(cls, text: str, version="1") -> "FilterBank":
        return cls(tuple(Kernel2D.from_dict(d) for d in json.loads(text)), version)

    def save(self, path):
        _atomic_write(Path(path), self.to_json().encode())

    @classmethod
    def load(cls, path) -> "FilterBank":
        from .manifest import parse_json  # line-numbered parse errors
        data = parse_json(Path(path).read_text(), str(path))
        return cls(tuple(Kernel2D.from_dict(d) for d in data))


def default_bank() -> FilterBank:
    """Six horizontal Gabor wavelets: 9x15, 9x27, 9x51, each even and odd."""
    kernels = []
    for cols in (15, 27, 51):
        for phase, tag in ((0.0, "even"), (np.pi / 2, "odd")):
            kernels.append(gabor_kernel(9, cols, wavelength=cols * 0.5, orientation=0.0,
                                        sigma=cols / 5, aspect=1.0, phase=phase,
                                        label=f"gabor-9x{cols}-{tag}"))
    return FilterBank(tuple(kernels), "default")


# ---------------------------------------------------------------------------
# Iris codes


def pack_columns(bits: np.ndarray) -> np.ndarray:
    """(..., H, W) bool -> (..., W, ceil(H/64)) uint64."""
    bits = np.asarray(bits, dtype=bool)
    h = bits.shape[-2]
    nw = -(-h // 64)
    t = np.swapaxes(bits, -1, -2)
    if nw * 64 != h:
        t = np.concatenate([t, np.zeros(t.shape[:-1] + (nw * 64 - h,), bool)], axis=-1)
    t = t.reshape(t.shape[:-1] + (nw, 64))
    packed = np.packbits(t, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8")[..., 0].astype(np.uint64)


def unpack_columns(words: np.ndarray, height: int) -> np.ndarray:
    """Inverse of :func:`pack_columns`."""
    b = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    b = b.reshape(words.shape + (8,))
    bits = np.unpackbits(b, axis=-1, bitorder="little").astype(bool)
    bits = bits.reshape(words.shape[:-1] + (-1,))[..., :height]
    return np.swapaxes(bits, -1, -2)


@dataclass(frozen=True, eq=False)
class IrisCode:
    planes: np.ndarray  # (F, W, nw) uint64
    mask: np.ndarray  # (W, nw) uint64
    height: int
    meta: CaptureMeta = field(default_factory=CaptureMeta)
    labels: tuple = ()

    @property
    def n_planes(self) -> int:
        return self.planes.shape[0]

    @property
    def width(self) -> int:
        return self.planes.shape[1]

    @classmethod
    def from_bits(cls, bits, mask, meta=None, labels=()) -> "IrisCode":
        bits = np.asarray(bits, dtype=bool)
        mask = np.asarray(mask) != 0
        if bits.ndim != 3 or bits.shape[1:] != mask.shape:
            raise ValueError(f"bit planes {bits.shape} do not match mask {mask.shape}")
        return cls(pack_columns(bits), pack_columns(mask), bits.shape[1],
                   meta or CaptureMeta(), tuple(labels))

    def bits(self) -> np.ndarray:
        return unpack_columns(self.planes, self.height)

    def mask_bits(self) -> np.ndarray:
        return unpack_columns(self.mask, self.height)

    def shifted(self, shift: int) -> "IrisCode":
        return IrisCode(np.roll(self.planes, shift, axis=1), np.roll(self.mask, shift, axis=0),
                        self.height, self.meta, self.labels)

    def __eq__(self, other):
        return (isinstance(other, IrisCode) and self.height == other.height
                and np.array_equal(self.planes, other.planes)
                and np.array_equal(self.mask, other.mask))

    def to_bytes(self) -> bytes:
        f, w = self.n_planes, self.width
        if f > 255 or w > 65535 or self.height > 65535:
            raise ValueError("code too large for the PMIC header")
        parts = [_HEADER.pack(PMIC_MAGIC, PMIC_VERSION, f, w, self.height)]
        parts.append(np.packbits(self.mask_bits().ravel(), bitorder="little").tobytes())
        for plane in self.bits():
            parts.append(np.packbits(plane.ravel(), bitorder="little").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes, meta=None, labels=()) -> "IrisCode":
        if len(raw) < _HEADER.size:
            raise UnsupportedFormat("truncated PMIC header")
        magic, version, f, w, h = _HEADER.unpack_from(raw)
        if magic != PMIC_MAGIC or version != PMIC_VERSION:
            raise UnsupportedFormat(f"not a PMIC v{PMIC_VERSION} file")
        n = -(-(w * h) // 8)
        if len(raw) != _HEADER.size + n * (f + 1):
            raise UnsupportedFormat("PMIC payload length does not match header")

        def plane(i):
            chunk = np.frombuffer(raw, np.uint8, n, _HEADER.size + i * n)
            return np.unpackbits(chunk, bitorder="little")[: w * h].reshape(h, w)

        mask = plane(0)
        bits = np.stack([plane(i + 1) for i in range(f)])
        return cls.from_bits(bits, mask, meta, labels)

    def save(self, path):
        _atomic_write(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path, meta=None) -> "IrisCode":
        return cls.from_bytes(Path(path).read_bytes(), meta)


def _atomic_write(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def filled_texture(texture: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked pixels by the mean of the valid ones.

    Filter responses near occlusions then depend only on valid texture, so
    codes cannot change when masked pixels do.
    """
    valid = mask != 0
    fill = texture[valid].mean() if valid.any() else 0.5
    return np.where(valid, texture, fill)


def response_bits(responses: np.ndarray, kernels) -> np.ndarray:
    # rounding noise of a zero-mean kernel on flat input must not read as positive
    floor = np.array([1e-9 * np.abs(k.weights).sum() for k in kernels])
    return responses > floor[:, None, None]


def code_mask(mask: np.ndarray, border: int) -> np.ndarray:
    m = np.asarray(mask) != 0
    if border > 0:
        m = m.copy()
        m[:border] = False
        m[-border:] = False
    return m


def encode(p, bank: FilterBank) -> IrisCode:
    """Binarize every filter response: bit = 1 where the response is positive."""
    tex = filled_texture(p.texture, p.mask)
    resp = correlate_bank(tex, bank.kernels)
    bits = response_bits(resp, bank.kernels)
    return IrisCode.from_bits(bits, code_mask(p.mask, bank.border), p.meta, bank.labels)


def mean_code_value(codes, filter_index: int) -> float:
    """Mean (over codes) fraction of 1-bits among valid positions of one plane."""
    codes = list(codes)
    if not codes:
        raise EmptyInput("no codes given")
    values = []
    for c in codes:
        if not 0 <= filter_index < c.n_planes:
            raise IndexOutOfRange(f"filter index {filter_index} out of range for {c.n_planes} planes")
        valid = np.bitwise_count(c.mask).sum()
        ones = np.bitwise_count(c.planes[filter_index] & c.mask).sum()
        values.append(ones / valid if valid else 0.0)
    return float(np.mean(values))


def encode_many(polars, bank: FilterBank, chunk=64) -> list[IrisCode]:
    """``encode`` over a list, batching the convolutions."""
    polars = list(polars)
    out = []
    for lo in range(0, len(polars), chunk):
        part = polars[lo:lo + chunk]
        tex = np.stack([filled_texture(p.texture, p.mask) for p in part])
        bits = response_bits(correlate_bank(tex, bank.kernels), bank.kernels)
        out += [IrisCode.from_bits(b, code_mask(p.mask, bank.border), p.meta, bank.labels)
                for b, p in zip(bits, part)]
    return out
