"""Command-line entry point: ``pmiris <command> [options]``.

Exit codes: 0 success, 1 hard error, 2 partial success (some entries failed;
see the error records written next to the outputs).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .encoding import FilterBank, IrisCode, _atomic_write, default_bank, encode
from .errors import InsufficientData, InvalidConfig, IrisError
from .evaluation import FMR_CAPS, HORIZONS, horizon_pairs, horizon_report, report_json, roc_csv, \
    scores_from_rows
from .imaging import load_gray
from .manifest import Manifest, parse_json
from .matching import MatchConfig, format_scores_csv, parse_scores_csv, score_rows
from .normalization import CaptureMeta, PolarIris, align, curate_patches, unwrap
from .pipeline import ExperimentConfig, run_experiment
from .segmentation import HoughConfig, segment
from .selection import EERObjective, prune_degenerate, sfs_sbs
from .siamese import PairPool, TrainConfig, extract_kernels, train
from .synthdata import SynthConfig, generate, write_dataset

OUT_ENV = "PMIRIS_OUT"
EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("pmiris")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "pmiris-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, text.encode())


def _write_json(path: Path, obj):
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    path = Path(path)
    return parse_json(path.read_text(), str(path))


def _map(fn, items, jobs):
    # results come back in input order whatever the worker count
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _hough(args) -> HoughConfig:
    if not getattr(args, "config", None):
        return HoughConfig()
    try:
        return HoughConfig(**_read_json(args.config))
    except TypeError as e:
        raise InvalidConfig(str(e)) from None


def _error_record(entry, exc):
    return {"capture_id": entry.capture_id, "error": type(exc).__name__, "message": str(exc)}


def load_polar(manifest: Manifest, entry, hough=HoughConfig()) -> PolarIris:
    """Polar image of one entry, segmenting Cartesian captures on the way.

    Entries with eye-corner annotations are rotated to the manifest's
    reference angle.
    """
    mask = manifest.resolve(entry.mask_path) if entry.mask_path else None
    if entry.kind == "polar":
        polar = PolarIris.load(manifest.resolve(entry.image_path), mask, entry.meta)
    else:
        img = load_gray(manifest.resolve(entry.image_path))
        polar = unwrap(img, segment(img, hough, mask), entry.meta)
    if entry.corners is not None:
        polar = align(polar, entry.corners, manifest.reference_angle)
    return polar


def _load_polars(manifest, hough, jobs):
    """(polars, error records) over all entries, in manifest order."""
    def one(entry):
        try:
            return load_polar(manifest, entry, hough), None
        except (IrisError, OSError, ValueError) as e:
            return None, _error_record(entry, e)
    results = _map(one, manifest.entries, jobs)
    return [p for p, _ in results if p is not None], [e for _, e in results if e is not None]


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    cfg = SynthConfig.from_dict(_read_json(args.config)) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = _out_dir(args)
    path = write_dataset(generate(cfg), out, cfg)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_segment(args) -> int:
    manifest = Manifest.load(args.manifest, require_paths=False)
    hough = _hough(args)
    out = _out_dir(args)
    todo = [e for e in manifest.entries if e.kind == "cartesian"]
    if not todo:
        print("manifest has only polar entries; nothing to segment")
        return EXIT_OK

    def one(entry):
        try:
            mask = manifest.resolve(entry.mask_path) if entry.mask_path else None
            img = load_gray(manifest.resolve(entry.image_path))
            return {"capture_id": entry.capture_id, **segment(img, hough, mask).to_dict()}, None
        except (IrisError, OSError, ValueError) as e:
            return None, _error_record(entry, e)

    results = _map(one, todo, args.jobs)
    for rec, _ in results:
        if rec is not None:
            _write_json(out / "segmentation" / f"{rec['capture_id']}.json", rec)
    errors = [e for _, e in results if e is not None]
    _write_json(out / "segmentation_errors.json", errors)
    print(f"segmented {len(todo) - len(errors)} of {len(todo)} captures")
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_encode(args) -> int:
    manifest = Manifest.load(args.manifest, require_paths=False)
    bank = FilterBank.load(args.bank) if args.bank else default_bank()
    out = _out_dir(args)
    polars, errors = _load_polars(manifest, _hough(args), args.jobs)
    index = []
    for code in _map(lambda p: encode(p, bank), polars, args.jobs):
        name = f"{code.meta.capture_id}.pmic"
        code.save(out / name)
        index.append({**code.meta.to_dict(), "path": name})
    _write_json(out / "index.json", {"labels": bank.labels, "codes": index})
    _write_json(out / "encode_errors.json", errors)
    print(f"encoded {len(index)} of {len(manifest)} captures with {len(bank)} filters")
    return EXIT_PARTIAL if errors else EXIT_OK


def load_codes(codes_dir) -> list[IrisCode]:
    codes_dir = Path(codes_dir)
    index = _read_json(codes_dir / "index.json")
    out = []
    for rec in index["codes"]:
        meta = CaptureMeta(rec["subject_id"], rec["eye"], rec["pmi_hours"], rec["capture_id"])
        out.append(IrisCode.load(codes_dir / rec["path"], meta))
    return out


def _read_pairs(path, codes):
    """Pairs listed as ``capture_id_a,capture_id_b`` rows (header optional)."""
    where = {c.meta.capture_id: i for i, c in enumerate(codes)}
    pairs = []
    for row in csv.reader(io.StringIO(Path(path).read_text())):
        if not row or row[0] == "capture_id_a":
            continue
        try:
            pairs.append((where[row[0]], where[row[1]]))
        except (KeyError, IndexError):
            raise InvalidConfig(f"pairs file names unknown captures: {row}") from None
    return pairs


def cmd_match(args) -> int:
    codes = load_codes(args.codes)
    horizon = max(args.horizon) if args.horizon else math.inf
    if args.pairs:
        pairs = _read_pairs(args.pairs, codes)
    else:
        _, pairs = horizon_pairs(codes, horizon)
    if not pairs:
        raise InsufficientData("no pairs to score")
    cfg = MatchConfig(args.max_shift, args.shift_step, args.min_bits)
    rows = score_rows(codes, pairs, cfg)
    out = _out_dir(args)
    _write_text(out / "scores.csv", format_scores_csv(rows))
    failed = sum(r["distance"] is None for r in rows)
    print(f"scored {len(rows)} pairs ({failed} failed to compare)")
    return EXIT_OK


def _patches(polars, max_occlusion):
    return [p for polar in polars for p in curate_patches(polar, max_occlusion)]


def cmd_train_filters(args) -> int:
    manifest = Manifest.load(args.manifest, require_paths=False)
    cfg = TrainConfig.from_dict(_read_json(args.config)) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    polars, errors = _load_polars(manifest, HoughConfig(), args.jobs)
    pool = PairPool(_patches(polars, args.max_occlusion))
    every = max(1, cfg.iterations // 20)
    result = train(pool, cfg, lambda it, l: it % every == 0 and log.info("iter %d loss %.4f", it, l))
    out = _out_dir(args)
    _write_text(out / "checkpoint.json", result.checkpoint_json())
    _write_text(out / "loss_history.csv", result.history_csv())
    FilterBank(tuple(extract_kernels(result.model)), "learned").save(out / "learned_bank.json")
    _write_json(out / "train_errors.json", errors)
    print(f"trained {cfg.iterations} iterations; final loss {result.loss_history[-1]:.4f}"
          if result.loss_history else "trained 0 iterations")
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_select_filters(args) -> int:
    manifest = Manifest.load(args.manifest, require_paths=False)
    initial = FilterBank.load(args.bank) if args.bank else default_bank()
    candidates = FilterBank.load(args.candidates).kernels
    polars, errors = _load_polars(manifest, HoughConfig(), args.jobs)
    if not args.no_prune:
        candidates = prune_degenerate(candidates, polars, args.prune_low, args.prune_high)
    horizon = args.horizon[-1] if args.horizon else 60.0
    objective = EERObjective(polars, horizon, MatchConfig())
    bank, trace = sfs_sbs(initial, candidates, objective, args.min_bank)
    out = _out_dir(args)
    bank.save(out / "selected_bank.json")
    _write_text(out / "trace.json", json.dumps(trace, indent=1) + "\n")
    _write_json(out / "select_errors.json", errors)
    print(f"selected {len(bank)} filters: {', '.join(bank.labels)}")
    return EXIT_PARTIAL if errors else EXIT_OK


def _horizon_tag(h):
    return "inf" if math.isinf(h) else f"{h:g}h"


def cmd_evaluate(args) -> int:
    if bool(args.scores) == bool(args.codes):
        raise InvalidConfig("give exactly one of --scores or --codes")
    if args.scores:
        rows = parse_scores_csv(Path(args.scores).read_text())
    else:
        codes = load_codes(args.codes)
        _, pairs = horizon_pairs(codes, math.inf)
        rows = score_rows(codes, pairs, MatchConfig())
    horizons = args.horizon or list(HORIZONS)
    caps = args.fmr or list(FMR_CAPS)
    out = _out_dir(args)
    reports = []
    for h in horizons:
        s = scores_from_rows(rows, h)
        if s.genuine.size == 0 or s.impostor.size == 0:
            reports.append({"horizon": h, "n_genuine": int(s.genuine.size),
                            "n_impostor": int(s.impostor.size), "eer": None,
                            "failures_to_compare": s.failures_to_compare})
            continue
        reports.append(horizon_report(s, caps))
        _write_text(out / "roc" / f"roc_{_horizon_tag(h)}.csv", roc_csv(s))
    _write_text(out / "report.json", report_json(reports))
    for r in reports:
        eer = "n/a" if r["eer"] is None else f"{r['eer']:.4f}"
        print(f"horizon {r['horizon']:g} h: EER {eer} "
              f"({r['n_genuine']} genuine, {r['n_impostor']} impostor)")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_dict(_read_json(args.config)) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = run_experiment(cfg, progress=log.info)
    out = _out_dir(args)
    result.write(out)
    for h in (cfg.tune_horizon, max(cfg.horizons)):
        if h in cfg.horizons:
            print(f"{h:g} h EER: default {result.eer('default', h):.4f}, "
                  f"hybrid {result.eer('hybrid', h):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmiris", description="Post-mortem iris recognition toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./pmiris-out)")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads")
        return sp

    sp = command("synth", cmd_synth, "generate a synthetic polar dataset")
    sp.add_argument("--config", help="synthetic-data config JSON")
    sp.add_argument("--seed", type=int)

    sp = command("segment", cmd_segment, "fit pupil/iris circles")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--config", help="Hough config JSON")

    sp = command("encode", cmd_encode, "write iris codes")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--bank", help="filter bank JSON (default Gabor bank if omitted)")
    sp.add_argument("--config", help="Hough config JSON")

    sp = command("match", cmd_match, "score code pairs")
    sp.add_argument("--codes", required=True, help="directory written by encode")
    sp.add_argument("--pairs", help="CSV of capture_id pairs (default: all pairs)")
    sp.add_argument("--horizon", type=float, action="append",
                    help="only pair captures within this PMI")
    sp.add_argument("--max-shift", type=int, default=16)
    sp.add_argument("--shift-step", type=int, default=1)
    sp.add_argument("--min-bits", type=int, default=256)

    sp = command("train-filters", cmd_train_filters, "train the Siamese network")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--config", help="training config JSON")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-occlusion", type=float, default=0.2)

    sp = command("select-filters", cmd_select_filters, "SFS/SBS hybrid bank search")
    sp.add_argument("--manifest", required=True, help="tuning set")
    sp.add_argument("--bank", help="initial bank (default Gabor bank if omitted)")
    sp.add_argument("--candidates", required=True, help="candidate kernels (bank JSON)")
    sp.add_argument("--horizon", type=float, action="append")
    sp.add_argument("--min-bank", type=int, default=2)
    sp.add_argument("--prune-low", type=float, default=0.1)
    sp.add_argument("--prune-high", type=float, default=0.9)
    sp.add_argument("--no-prune", action="store_true")

    sp = command("evaluate", cmd_evaluate, "EER / FNMR@FMR reports and ROC curves")
    sp.add_argument("--scores", help="scores CSV written by match")
    sp.add_argument("--codes", help="directory written by encode")
    sp.add_argument("--horizon", type=float, action="append")
    sp.add_argument("--fmr", type=float, action="append")

    sp = command("run", cmd_run, "full synthetic experiment from one config")
    sp.add_argument("--config", help="experiment config JSON")
    sp.add_argument("--seed", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (IrisError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
