"""Degenerate-filter pruning and the alternating SFS/SBS bank optimizer."""
from __future__ import annotations

import hashlib

import numpy as np

from .encoding import FilterBank, IrisCode, code_mask, encode, filled_texture, mean_code_value, \
    response_bits
from .errors import EmptyDataset, InsufficientPairs, InvalidConfig, ObjectiveFailure
from .evaluation import ScoreSet, eer, horizon_pairs
from .imaging import correlate_bank
from .matching import MatchConfig, PairCounts, best_over_shifts, pair_label


def prune_degenerate(candidates, dataset, low=0.1, high=0.9):
    """Keep kernels whose mean code value over ``dataset`` lies in [low, high]."""
    if not 0 <= low < high <= 1:
        raise InvalidConfig(f"need 0 <= low < high <= 1, got {low}, {high}")
    dataset = list(dataset)
    if not dataset:
        raise EmptyDataset("no polar images to measure code values on")
    kept = []
    for k in candidates:
        bank = FilterBank((k,))
        value = mean_code_value([encode(p, bank) for p in dataset], 0)
        if low <= value <= high:
            kept.append(k)
    return kept


def _kernel_key(k):
    return (k.label, hashlib.sha1(k.weights.tobytes()).hexdigest())


class EERObjective:
    """EER of a bank on the tuning pairs within a PMI horizon.

    Per-kernel disagreement counts are cached, so scoring a bank costs only
    a sum over its planes; every bank is still scored exactly as ``match``
    would score it.
    """

    def __init__(self, tuning, horizon_hours=60.0, cfg: MatchConfig = MatchConfig()):
        self.tuning = list(tuning)
        self.horizon_hours = horizon_hours
        self.cfg = cfg
        metas = [p.meta for p in self.tuning]
        _, self.pairs = horizon_pairs(self.tuning, horizon_hours)
        self.genuine = np.array([pair_label(metas[i], metas[j]) == "genuine" for i, j in self.pairs],
                                dtype=bool)
        if not self.genuine.any() or self.genuine.all():
            raise InsufficientPairs(
                f"tuning set needs genuine and impostor pairs within {horizon_hours} h")
        self._filled = [filled_texture(p.texture, p.mask) for p in self.tuning]
        self._planes = {}
        self._valid = {}
        self.evaluations = 0

    def _counts(self, kernel, border):
        key = (_kernel_key(kernel), border)
        if key not in self._planes:
            resp = correlate_bank(np.stack(self._filled), [kernel])
            bits = response_bits(resp, [kernel])
            codes = [IrisCode.from_bits(b, code_mask(p.mask, border))
                     for b, p in zip(bits, self.tuning)]
            pc = PairCounts(codes, self.pairs, self.cfg)
            self._planes[key] = pc.disagree[:, :, 0]
            self._valid.setdefault(border, pc.valid)
            self.shifts = pc.shifts
        return self._planes[key]

    def scores(self, bank: FilterBank):
        border = bank.border
        total = sum(self._counts(k, border) for k in bank.kernels)
        d, _, _, ok = best_over_shifts(total, self._valid[border], len(bank), self.shifts,
                                       self.cfg.min_bits)
        gen = d[ok & self.genuine]
        imp = d[ok & ~self.genuine]
        return ScoreSet(gen, imp, self.horizon_hours, int(np.count_nonzero(~ok)))

    def __call__(self, bank: FilterBank) -> float:
        s = self.scores(bank)
        if s.genuine.size == 0 or s.impostor.size == 0:
            raise ObjectiveFailure("too few comparable pairs to compute an EER")
        self.evaluations += 1
        return eer(s)[0]


def eer_objective(bank: FilterBank, tuning, horizon_hours=60.0, cfg: MatchConfig = MatchConfig()):
    return EERObjective(tuning, horizon_hours, cfg)(bank)


def sfs_sbs(initial: FilterBank, candidates, objective, min_bank: int = 2):
    """Alternate forward addition of candidates and backward removal of
    original (gabor) filters until no candidate strictly lowers the EER.

    Returns ``(bank, trace)``; the trace lists every accepted move as
    ``{step, action, filter_label, eer}`` and ends with a ``stop`` entry.
    """
    candidates = list(candidates)
    taken = set(initial.labels)
    clash = [k.label for k in candidates if k.label in taken]
    if clash:
        raise InvalidConfig(f"candidates already in the bank: {clash}")
    bank = initial
    current = objective(bank)
    unused = list(candidates)
    trace = []

    def log(action, label, value):
        trace.append({"step": len(trace) + 1, "action": action, "filter_label": label,
                      "eer": float(value)})

    while True:
        if not unused:
            break
        trials = [objective(bank.with_kernels(bank.kernels + (c,))) for c in unused]
        best = int(np.argmin(trials))
        if not trials[best] < current:
            break
        added = unused.pop(best)
        bank = bank.with_kernels(bank.kernels + (added,))
        current = trials[best]
        log("add", added.label, current)

        removable = [k for k in bank.kernels if k.provenance == "gabor"]
        if len(bank) <= min_bank or not removable:
            continue
        trials = [objective(bank.with_kernels(tuple(k for k in bank.kernels if k is not r)))
                  for r in removable]
        best = int(np.argmin(trials))
        if trials[best] <= current:
            gone = removable[best]
            bank = bank.with_kernels(tuple(k for k in bank.kernels if k is not gone))
            current = trials[best]
            log("remove", gone.label, current)
    log("stop", None, current)
    return bank, trace
