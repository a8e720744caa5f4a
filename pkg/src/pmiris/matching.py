"""Mask-aware fractional Hamming distance, minimized over circular shifts.

Shift convention: scoring ``a`` against ``b`` at shift ``s`` compares
``a[:, c]`` with ``b[:, c - s]`` (``np.roll(b, s)``). If ``b`` is ``a``
rolled by +8 columns, the best shift is therefore -8.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numba
import numpy as np
from numba import types
from numba.extending import intrinsic

from .encoding import IrisCode
from .errors import DimensionMismatch, InsufficientOverlap, InvalidConfig


@dataclass(frozen=True)
class MatchConfig:
    max_shift: int = 16
    shift_step: int = 1
    min_bits: int = 256

    def __post_init__(self):
        if self.max_shift < 0 or self.shift_step < 1 or self.min_bits < 1:
            raise InvalidConfig("need max_shift >= 0, shift_step >= 1, min_bits >= 1")

    def shifts(self) -> np.ndarray:
        """Shifts in tie-break order: 0, -step, +step, -2*step, ..."""
        out = [0]
        for s in range(self.shift_step, self.max_shift + 1, self.shift_step):
            out += [-s, s]
        return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class MatchScore:
    distance: float
    best_shift: int
    effective_bits: int


@intrinsic
def _popcount(typingctx, x):
    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])
    return types.uint64(types.uint64), codegen


@numba.njit(cache=True, nogil=True)
def _count_pairs(words, ia, ib, shifts, disagree, valid):
    # words is (N, W, nw, F + 1) with the mask in the last slot
    w, nw, n_f = words.shape[1], words.shape[2], words.shape[3] - 1
    acc = np.zeros(n_f, dtype=np.uint64)
    for p in range(ia.shape[0]):
        a, b = ia[p], ib[p]
        for si in range(shifts.shape[0]):
            s = shifts[si]
            acc[:] = 0
            v = np.uint64(0)
            for c in range(w):
                cb = (c - s) % w
                for k in range(nw):
                    wa = words[a, c, k]
                    wb = words[b, cb, k]
                    m = wa[n_f] & wb[n_f]
                    v += _popcount(m)
                    for f in range(n_f):
                        acc[f] += _popcount((wa[f] ^ wb[f]) & m)
            for f in range(n_f):
                disagree[p, si, f] = acc[f]
            valid[p, si] = v


def shift_counts(planes, masks, pairs, shifts):
    """Per-pair, per-shift, per-plane disagreement counts and valid-bit counts.

    ``planes`` is (N, F, W, nw) and ``masks`` (N, W, nw) for N codes;
    ``pairs`` indexes into them. Returns (disagree (P, S, F), valid (P, S)).
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    shifts = np.asarray(shifts, dtype=np.int64)
    disagree = np.zeros((len(pairs), len(shifts), planes.shape[1]), dtype=np.int64)
    valid = np.zeros((len(pairs), len(shifts)), dtype=np.int64)
    words = np.concatenate([np.moveaxis(planes, 1, -1), masks[..., None]], axis=-1)
    _count_pairs(np.ascontiguousarray(words, dtype=np.uint64),
                 np.ascontiguousarray(pairs[:, 0]), np.ascontiguousarray(pairs[:, 1]),
                 shifts, disagree, valid)
    return disagree, valid


def best_over_shifts(disagree, valid, n_planes, shifts, min_bits):
    """Reduce (..., S) totals to (distance, shift, bits, ok) per leading index.

    ``disagree`` is already summed over the planes in use. The first minimum
    in ``shifts`` order wins, which implements the tie-break rule.
    """
    bits = valid * n_planes
    ok = bits >= min_bits
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.where(ok, disagree / np.where(ok, bits, 1), np.inf)
    k = np.argmin(dist, axis=-1)
    take = lambda arr: np.take_along_axis(arr, k[..., None], axis=-1)[..., 0]
    return take(dist), np.asarray(shifts)[k], take(bits), ok.any(axis=-1)


def _check_dims(a: IrisCode, b: IrisCode):
    if a.planes.shape != b.planes.shape or a.height != b.height:
        raise DimensionMismatch(
            f"codes differ in shape: {a.planes.shape}/{a.height} vs {b.planes.shape}/{b.height}")


def match(a: IrisCode, b: IrisCode, max_shift: int = 16, shift_step: int = 1,
          min_bits: int = 256) -> MatchScore:
    cfg = MatchConfig(max_shift, shift_step, min_bits)
    _check_dims(a, b)
    shifts = cfg.shifts()
    dis, valid = shift_counts(np.stack([a.planes, b.planes]), np.stack([a.mask, b.mask]),
                              [(0, 1)], shifts)
    d, s, bits, ok = best_over_shifts(dis[0].sum(axis=-1), valid[0], a.n_planes, shifts, min_bits)
    if not ok:
        raise InsufficientOverlap(f"no shift leaves {min_bits} comparable bits")
    return MatchScore(float(d), int(s), int(bits))


class PairCounts:
    """Per-plane disagreement counts for a fixed list of code pairs.

    Computing these once lets any subset of planes be scored without
    touching the bits again (used by filter selection).
    """

    def __init__(self, codes, pairs, cfg: MatchConfig = MatchConfig()):
        self.cfg = cfg
        self.shifts = cfg.shifts()
        self.pairs = [tuple(p) for p in pairs]
        codes = list(codes)
        for c in codes[1:]:
            _check_dims(codes[0], c)
        if codes:
            planes = np.stack([c.planes for c in codes])
            masks = np.stack([c.mask for c in codes])
        else:
            planes = np.zeros((0, 0, 1, 1), np.uint64)
            masks = np.zeros((0, 1, 1), np.uint64)
        self.disagree, self.valid = shift_counts(planes, masks, self.pairs, self.shifts)

    def scores(self, planes=None):
        """(distance, best_shift, effective_bits, ok) arrays over pairs."""
        sel = self.disagree if planes is None else self.disagree[:, :, list(planes)]
        return best_over_shifts(sel.sum(axis=-1), self.valid, sel.shape[-1], self.shifts,
                                self.cfg.min_bits)


SCORE_FIELDS = ["capture_id_a", "capture_id_b", "subject_a", "subject_b", "pmi_a", "pmi_b",
                "distance", "best_shift", "effective_bits", "label"]


def pair_label(a, b) -> str:
    return "genuine" if a.eye_key == b.eye_key else "impostor"


def score_rows(codes, pairs, cfg: MatchConfig = MatchConfig()):
    """Score rows for the CSV; pairs without enough overlap get distance None."""
    codes = list(codes)
    counts = PairCounts(codes, pairs, cfg)
    dist, shift, bits, ok = counts.scores()
    rows = []
    for (i, j), d, s, n, good in zip(counts.pairs, dist, shift, bits, ok):
        ma, mb = codes[i].meta, codes[j].meta
        rows.append({
            "capture_id_a": ma.capture_id, "capture_id_b": mb.capture_id,
            "subject_a": ma.subject_id, "subject_b": mb.subject_id,
            "pmi_a": ma.pmi_hours, "pmi_b": mb.pmi_hours,
            "distance": float(d) if good else None,
            "best_shift": int(s) if good else None,
            "effective_bits": int(n) if good else 0,
            "label": pair_label(ma, mb),
            "eye_a": ma.eye, "eye_b": mb.eye,
        })
    return rows


def format_scores_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SCORE_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        r = dict(r)
        r["distance"] = "" if r["distance"] is None else repr(float(r["distance"]))
        r["best_shift"] = "" if r["best_shift"] is None else r["best_shift"]
        r["pmi_a"], r["pmi_b"] = repr(float(r["pmi_a"])), repr(float(r["pmi_b"]))
        w.writerow(r)
    return buf.getvalue()


def parse_scores_csv(text: str):
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({
            **r,
            "pmi_a": float(r["pmi_a"]), "pmi_b": float(r["pmi_b"]),
            "distance": float(r["distance"]) if r["distance"] else None,
            "best_shift": int(r["best_shift"]) if r["best_shift"] else None,
            "effective_bits": int(r["effective_bits"]),
        })
    return rows
