"""End-to-end experiment on synthetic data: train, select, evaluate.

Three subject-disjoint synthetic sets are generated from one master seed:
``train`` feeds the Siamese network, ``tune`` drives filter pruning and the
SFS/SBS search, and ``test`` is only used for the final reports.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .encoding import FilterBank, _atomic_write, default_bank, encode_many
from .errors import InvalidConfig
from .evaluation import FMR_CAPS, HORIZONS, build_scores, horizon_report, report_json, \
    roc_csv, scores_from_rows
from .matching import MatchConfig
from .normalization import DEFAULT_MAX_OCCLUSION, align, curate_patches
from .selection import EERObjective, prune_degenerate, sfs_sbs
from .siamese import PairPool, TrainConfig, extract_kernels, train
from .synthdata import SynthConfig, generate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    train_subjects: int = 20
    tune_subjects: int = 10
    test_subjects: int = 10
    training: TrainConfig = field(default_factory=lambda: TrainConfig(iterations=800,
                                                                      precision="float32"))
    max_occlusion: float = DEFAULT_MAX_OCCLUSION
    prune_low: float = 0.1
    prune_high: float = 0.9
    tune_horizon: float = 60.0
    min_bank: int = 2
    horizons: tuple = HORIZONS
    fmr_caps: tuple = FMR_CAPS
    match: MatchConfig = field(default_factory=MatchConfig)

    def validate(self):
        for name in ("train_subjects", "tune_subjects", "test_subjects"):
            if getattr(self, name) < 2:
                raise InvalidConfig(f"{name} must be >= 2")
        if not self.horizons:
            raise InvalidConfig("need at least one horizon")

    def split(self, name) -> SynthConfig:
        """Synthetic config of one split; splits use consecutive subject ranges."""
        n_train, n_tune = self.train_subjects, self.tune_subjects
        offset, n = {"train": (0, n_train), "tune": (n_train, self.tune_subjects),
                     "test": (n_train + n_tune, self.test_subjects)}[name]
        return replace(self.synth, seed=self.seed, n_subjects=n, subject_offset=offset)

    def to_dict(self):
        d = asdict(self)
        d["synth"] = self.synth.to_dict()
        d["horizons"] = list(self.horizons)
        d["fmr_caps"] = list(self.fmr_caps)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown experiment keys: {sorted(unknown)}")
        try:
            if "synth" in d:
                d["synth"] = SynthConfig.from_dict(d["synth"])
            if "training" in d:
                d["training"] = TrainConfig(**d["training"])
            if "match" in d:
                d["match"] = MatchConfig(**d["match"])
        except TypeError as e:
            raise InvalidConfig(str(e)) from None
        for key in ("horizons", "fmr_caps"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def aligned_split(cfg: ExperimentConfig, name):
    return [align(c.polar, c.corners) for c in generate(cfg.split(name))]


def evaluate_bank(bank: FilterBank, polars, horizons, match_cfg=MatchConfig(), fmr_caps=FMR_CAPS):
    """Per-horizon reports plus the score sets they came from.

    All pairs are scored once at the widest horizon and filtered per horizon.
    """
    codes = encode_many(polars, bank)
    top = build_scores(codes, max(horizons), match_cfg)
    sets = [scores_from_rows(top.rows, h) for h in horizons]
    return [horizon_report(s, fmr_caps) for s in sets], sets


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    learned: FilterBank
    hybrid: FilterBank
    trace: list
    reports: dict  # bank name -> list of horizon reports
    score_sets: dict
    training: object  # siamese.TrainResult

    def eer(self, bank_name, horizon):
        for r in self.reports[bank_name]:
            if r["horizon"] == horizon:
                return r["eer"]
        raise KeyError(horizon)

    def summary(self) -> dict:
        return {"config": self.config.to_dict(), "banks": self.reports,
                "hybrid_labels": self.hybrid.labels}

    def write(self, out_dir):
        out = Path(out_dir)
        (out / "roc").mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "report.json", report_json(self.summary()).encode())
        _atomic_write(out / "trace.json", (json.dumps(self.trace, indent=1) + "\n").encode())
        self.learned.save(out / "learned_bank.json")
        self.hybrid.save(out / "hybrid_bank.json")
        _atomic_write(out / "checkpoint.json", self.training.checkpoint_json().encode())
        _atomic_write(out / "loss_history.csv", self.training.history_csv().encode())
        for name, sets in self.score_sets.items():
            for s in sets:
                _atomic_write(out / "roc" / f"{name}_{_horizon_tag(s.horizon_hours)}.csv",
                              roc_csv(s).encode())


def _horizon_tag(h):
    return "inf" if math.isinf(h) else f"{h:g}h"


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    cfg.validate()
    say = progress or log.info

    say("generating training split")
    patches = [p for polar in aligned_split(cfg, "train")
               for p in curate_patches(polar, cfg.max_occlusion)]
    pool = PairPool(patches)
    say(f"training on {len(patches)} patches, {len(pool.genuine)} genuine pairs")
    training = train(pool, replace(cfg.training, seed=cfg.seed))
    learned = FilterBank(tuple(extract_kernels(training.model)), "learned")

    tune = aligned_split(cfg, "tune")
    candidates = prune_degenerate(learned.kernels, tune, cfg.prune_low, cfg.prune_high)
    say(f"{len(candidates)} of {len(learned)} learned filters survive pruning")
    objective = EERObjective(tune, cfg.tune_horizon, cfg.match)
    base = default_bank()
    hybrid, trace = sfs_sbs(base, candidates, objective, cfg.min_bank)
    hybrid = FilterBank(hybrid.kernels, "hybrid")
    say(f"hybrid bank: {hybrid.labels}")

    test = aligned_split(cfg, "test")
    reports, sets = {}, {}
    for name, bank in (("default", base), ("hybrid", hybrid)):
        reports[name], sets[name] = evaluate_bank(bank, test, cfg.horizons, cfg.match, cfg.fmr_caps)
    return ExperimentResult(cfg, learned, hybrid, trace, reports, sets, training)
