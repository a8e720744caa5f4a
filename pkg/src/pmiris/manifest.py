"""Dataset manifests: capture metadata plus image/mask paths."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InsufficientData, InvalidConfig, ParseError
from .normalization import CaptureMeta

KINDS = ("cartesian", "polar")


def parse_json(text: str, source: str = "<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{source}: {e.msg}", e.lineno) from None


@dataclass(frozen=True)
class Entry:
    capture_id: str
    subject_id: str
    eye: str
    pmi_hours: float
    image_path: str
    mask_path: str | None = None
    corners: tuple | None = None
    kind: str = "cartesian"

    @property
    def meta(self) -> CaptureMeta:
        return CaptureMeta(self.subject_id, self.eye, self.pmi_hours, self.capture_id)

    def to_dict(self):
        d = {"capture_id": self.capture_id, "subject_id": self.subject_id, "eye": self.eye,
             "pmi_hours": self.pmi_hours, "image_path": self.image_path, "kind": self.kind}
        if self.mask_path is not None:
            d["mask_path"] = self.mask_path
        if self.corners is not None:
            d["corners"] = [list(p) for p in self.corners]
        return d


def _entry(d, i) -> Entry:
    if not isinstance(d, dict):
        raise InvalidConfig(f"entry {i} is not an object")
    missing = [k for k in ("capture_id", "subject_id", "eye", "pmi_hours", "image_path") if k not in d]
    if missing:
        raise InvalidConfig(f"entry {i} lacks {missing}")
    pmi = d["pmi_hours"]
    if not isinstance(pmi, (int, float)) or not math.isfinite(pmi) or pmi < 0:
        raise InvalidConfig(f"entry {i}: pmi_hours must be a finite number >= 0")
    if d["eye"] not in ("L", "R"):
        raise InvalidConfig(f"entry {i}: eye must be L or R")
    kind = d.get("kind", "cartesian")
    if kind not in KINDS:
        raise InvalidConfig(f"entry {i}: kind must be one of {KINDS}")
    corners = d.get("corners")
    if corners is not None:
        if len(corners) != 2 or any(len(p) != 2 for p in corners):
            raise InvalidConfig(f"entry {i}: corners must be two (x, y) points")
        corners = tuple(tuple(float(v) for v in p) for p in corners)
    return Entry(str(d["capture_id"]), str(d["subject_id"]), d["eye"], float(pmi),
                 str(d["image_path"]), d.get("mask_path"), corners, kind)


@dataclass(frozen=True)
class Manifest:
    entries: tuple
    reference_angle: float = 0.0
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        ids = [e.capture_id for e in self.entries]
        dup = sorted({c for c in ids if ids.count(c) > 1})
        if dup:
            raise InvalidConfig(f"duplicate capture ids: {dup}")

    def __len__(self):
        return len(self.entries)

    def resolve(self, rel) -> Path:
        """Paths in a manifest are relative to the manifest's directory."""
        return self.root / rel

    def missing_paths(self):
        out = []
        for e in self.entries:
            for p in (e.image_path, e.mask_path):
                if p is not None and not self.resolve(p).exists():
                    out.append((e.capture_id, p))
        return out

    @classmethod
    def from_dict(cls, d, root=Path(".")) -> "Manifest":
        if not isinstance(d, dict) or "entries" not in d:
            raise InvalidConfig("manifest must be an object with an 'entries' list")
        entries = tuple(_entry(e, i) for i, e in enumerate(d["entries"]))
        return cls(entries, float(d.get("reference_angle", 0.0)), Path(root))

    @classmethod
    def load(cls, path, require_paths=True, allow_empty=False) -> "Manifest":
        path = Path(path)
        m = cls.from_dict(parse_json(path.read_text(), str(path)), path.parent)
        if not m.entries and not allow_empty:
            raise InsufficientData(f"{path}: manifest has no entries")
        if require_paths:
            missing = m.missing_paths()
            if missing:
                raise InvalidConfig(f"{path}: missing files {missing[:5]}")
        return m

    def to_json(self) -> str:
        d = {"reference_angle": self.reference_angle,
             "entries": [e.to_dict() for e in self.entries]}
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json())
        os.replace(tmp, path)
