"""Genuine/impostor score sets per post-mortem horizon; ROC, EER, FNMR@FMR.

Scores are distances: smaller means more similar, and a comparison is
accepted at threshold t when distance < t. Hence
FMR(t) = #{impostor < t} / n_imp and FNMR(t) = #{genuine >= t} / n_gen.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyScores, InsufficientData
from .matching import MatchConfig, score_rows

HORIZONS = (12, 24, 48, 60, 72, 110, 160, 210, 369)
FMR_CAPS = (0.001, 0.01, 0.05)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    horizon_hours: float = math.inf
    failures_to_compare: int = 0
    rows: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64)
        self.impostor = np.asarray(self.impostor, dtype=np.float64)
        for arr in (self.genuine, self.impostor):
            if arr.size and (arr.min() < 0 or arr.max() > 1):
                raise ValueError("scores must lie in [0, 1]")


def horizon_pairs(codes, horizon_hours):
    """Indices of codes within the horizon and all unordered pairs among them.

    Codes are visited in capture-id order so the result does not depend on
    the input order.
    """
    order = sorted(range(len(codes)), key=lambda i: codes[i].meta.capture_id)
    keep = [i for i in order if codes[i].meta.pmi_hours <= horizon_hours]
    pairs = [(keep[a], keep[b]) for a in range(len(keep)) for b in range(a + 1, len(keep))]
    return keep, pairs


def scores_from_rows(rows, horizon_hours=math.inf) -> ScoreSet:
    rows = [r for r in rows if r["pmi_a"] <= horizon_hours and r["pmi_b"] <= horizon_hours]
    gen = [r["distance"] for r in rows if r["label"] == "genuine" and r["distance"] is not None]
    imp = [r["distance"] for r in rows if r["label"] == "impostor" and r["distance"] is not None]
    ftc = sum(r["distance"] is None for r in rows)
    return ScoreSet(gen, imp, horizon_hours, ftc, rows)


def build_scores(codes, horizon_hours=math.inf, cfg: MatchConfig = MatchConfig()) -> ScoreSet:
    codes = list(codes)
    keep, pairs = horizon_pairs(codes, horizon_hours)
    if len(keep) < 2:
        raise InsufficientData(f"fewer than 2 captures within {horizon_hours} h")
    return scores_from_rows(score_rows(codes, pairs, cfg), horizon_hours)


def _require(s: ScoreSet, both=True):
    if s.impostor.size == 0 or (both and s.genuine.size == 0):
        raise EmptyScores("score set needs genuine and impostor scores")


def error_rates(s: ScoreSet, thresholds):
    thresholds = np.asarray(thresholds, dtype=np.float64)
    imp, gen = np.sort(s.impostor), np.sort(s.genuine)
    fmr = np.searchsorted(imp, thresholds, side="left") / imp.size
    fnmr = 1.0 - np.searchsorted(gen, thresholds, side="left") / gen.size
    return fmr, fnmr


def _sweep(s: ScoreSet):
    union = np.unique(np.concatenate([s.genuine, s.impostor]))
    thresholds = np.append(union, np.nextafter(union[-1], np.inf))
    return (thresholds,) + error_rates(s, thresholds)


def eer(s: ScoreSet):
    """(EER, threshold), linearly interpolated where FMR - FNMR changes sign."""
    _require(s)
    t, fmr, fnmr = _sweep(s)
    diff = fmr - fnmr  # -1 at the lowest threshold, +1 past the highest
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(fmr[k]), float(t[k])
    alpha = -diff[k - 1] / (diff[k] - diff[k - 1])
    rate = fmr[k - 1] + alpha * (fmr[k] - fmr[k - 1])
    return float(rate), float(t[k - 1] + alpha * (t[k] - t[k - 1]))


def fnmr_at_fmr(s: ScoreSet, fmr_cap: float):
    """(FNMR, threshold) at the largest threshold whose FMR stays <= cap."""
    _require(s, both=False)
    imp = np.sort(s.impostor)
    allowed = math.floor(fmr_cap * imp.size + 1e-9)
    if allowed >= imp.size:
        top = max(imp[-1], s.genuine.max()) if s.genuine.size else imp[-1]
        t = float(np.nextafter(top, np.inf))
    else:
        t = float(imp[allowed])
    fnmr = float(np.count_nonzero(s.genuine >= t) / s.genuine.size) if s.genuine.size else 0.0
    return fnmr, t


def roc_points(s: ScoreSet):
    """(FMR, 1 - FNMR) at every distinct threshold, from (0, .) to (1, 1)."""
    _require(s)
    _, fmr, fnmr = _sweep(s)
    return [(float(a), float(1.0 - b)) for a, b in zip(fmr, fnmr)]


def horizon_report(s: ScoreSet, fmr_caps=FMR_CAPS) -> dict:
    e, thr = eer(s)
    return {
        "horizon": s.horizon_hours,
        "n_genuine": int(s.genuine.size),
        "n_impostor": int(s.impostor.size),
        "eer": e,
        "eer_threshold": thr,
        "fnmr_at": {repr(c): fnmr_at_fmr(s, c)[0] for c in fmr_caps},
        "failures_to_compare": int(s.failures_to_compare),
    }


def roc_csv(s: ScoreSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fmr", "tmr"])
    for a, b in roc_points(s):
        w.writerow([repr(a), repr(b)])
    return buf.getvalue()


def report_json(reports) -> str:
    return json.dumps(reports, indent=2, sort_keys=True) + "\n"
