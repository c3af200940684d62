"""Command-line driver: ``sscdl {train,eval,ablate,sweep,check,histogram}``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__
from .confdist import ConfidenceGrid
from .config import ConfigError, TrainConfig, load_config, parse_config_text, parse_value, preset
from .dataset import DataError, SamplingError, confidence_histogram, load_split, write_histogram_csv
from .diffcore import CheckpointError, NumericalError, load_checkpoint
from .evaluation import (evaluate, low_confidence_analysis, rank_results, write_rank_dump, write_reports_csv,
                         write_reports_json)
from .trainer import params_from_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SWEEP_PARAMS = ("sigma", "w_p", "threshold")
DATA_FILES = ("train.tsv", "valid.tsv", "test.tsv", "data.tsv")

log = logging.getLogger("sscdl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# helpers --------------------------------------------------------------------

def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def source_version() -> str:
    """Package version plus the git commit of the source tree when available."""
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "-C", str(here), "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            dirty = subprocess.run(["git", "-C", str(here), "status", "--porcelain", "--", "."],
                                   capture_output=True, text=True, timeout=5)
            flag = "-dirty" if dirty.stdout.strip() else ""
            return f"{__version__}+git.{rev.stdout.strip()}{flag}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def dataset_hashes(data_dir) -> dict:
    out = {}
    for name in DATA_FILES:
        p = Path(data_dir) / name
        if p.is_file():
            out[name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def resolve_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(getattr(args, "preset", None) or "nl27k")
    changes = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = (p.strip() for p in item.split("=", 1))
        changes[key] = parse_value(key, raw)
    return cfg.replace(**changes) if changes else cfg.validate()


def write_manifest(out_dir: Path, cfg: TrainConfig, data_dir, command: str, started: str, extra=None) -> dict:
    manifest = {
        "command": command,
        "config": cfg.as_dict(),
        "config_text": cfg.to_text(),
        "config_hash": cfg.digest(),
        "data_dir": str(Path(data_dir).resolve()),
        "dataset_hashes": dataset_hashes(data_dir),
        "version": source_version(),
        "seed": cfg.seed,
        "ablation": {
            "mode": cfg.ablation,
            "generator": "disabled" if cfg.ablation == "no_mst" else "enabled",
            "targets": "one-hot" if cfg.ablation == "no_cdl" else "gaussian-distribution",
        },
        "started": started,
        "finished": _utc_now(),
    }
    manifest.update(extra or {})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _write_metrics_csv(path: Path, records: list) -> None:
    if not records:
        return
    cols = [k for k in records[0] if k != "seconds"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            w.writerow(["" if r.get(c) is None else r.get(c) for c in cols])


def run_training(cfg: TrainConfig, data_dir, out_dir, command: str) -> dict:
    started = _utc_now()
    split = load_split(data_dir, seed=cfg.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.to_text())
    result = train(cfg, split, out_dir)
    _write_metrics_csv(out_dir / "metrics.csv", result.state.log)
    final = result.final_report.to_dict() if result.final_report else None
    summary = {"best_epoch": result.best_epoch, "best_val_mse": result.best_val_mse, "final_val": final,
               "checkpoint": str(out_dir / "final.ckpt")}
    write_manifest(out_dir, cfg, data_dir, command, started, {"result": summary})
    return summary


# commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    print(json.dumps(run_training(cfg, args.data_dir, args.out_dir, "train"), indent=2))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args).replace(ablation=args.mode)
    print(json.dumps(run_training(cfg, args.data_dir, args.out_dir, f"ablate {args.mode}"), indent=2))
    return EXIT_OK


def load_model(path):
    """``(TrainConfig, ModelParams, meta)`` from a training checkpoint."""
    arrays, meta = load_checkpoint(path)
    if meta.get("format") != "sscdl-model":
        raise CheckpointError(f"{path}: not a model checkpoint")
    cfg = parse_config_text(meta["config"])
    params = params_from_checkpoint(arrays, meta).astype(cfg.dtype)
    return cfg, params, meta


def cmd_eval(args) -> int:
    cfg, params, meta = load_model(args.checkpoint)
    split = load_split(args.data_dir, seed=cfg.seed)
    if split.vocab.digest() != meta["vocab_hash"]:
        raise DataError(f"{args.data_dir}: vocabulary does not match the checkpoint")
    filtered = not args.raw
    reports = {}
    for name in args.splits.split(","):
        quads = getattr(split, name, None)
        if name not in ("train", "valid", "test") or quads is None:
            raise UsageError(f"unknown split {name!r}")
        if not len(quads):
            continue
        reports[name] = evaluate(params, quads, split.known, ConfidenceGrid(cfg.n), filtered=filtered)
        if args.low_confidence:
            reports[f"{name}/low-confidence"] = low_confidence_analysis(params, quads, args.cutoff,
                                                                        ConfidenceGrid(cfg.n))
        if args.rank_dump:
            out = Path(args.out_dir or ".")
            out.mkdir(parents=True, exist_ok=True)
            write_rank_dump(out / f"ranks_{name}.csv", rank_results(params, quads, split.known, filtered))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_reports_json(out / "eval_report.json", reports)
        write_reports_csv(out / "eval_report.csv", reports)
    print(json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2))
    return EXIT_OK


def parse_values(text: str) -> list:
    vals = [v.strip() for v in (text or "").split(",") if v.strip()]
    if not vals:
        raise UsageError("--values needs at least one value")
    return vals


def _sweep_point(job: tuple) -> dict:
    cfg_text, param, raw, data_dir, out_dir = job
    cfg = parse_config_text(cfg_text)
    cfg = cfg.replace(**{param: parse_value(param, raw)})
    point_dir = Path(out_dir) / f"{param}={raw}"
    run_training(cfg, data_dir, point_dir, f"sweep {param}={raw}")
    _, params, _ = load_model(point_dir / "final.ckpt")
    split = load_split(data_dir, seed=cfg.seed)
    quads = split.test if len(split.test) else split.valid
    rep = evaluate(params, quads, split.known, ConfidenceGrid(cfg.n), filtered=cfg.filtered)
    return {"value": raw, "mae": rep.mae, "wmrr": rep.wmrr}


def cmd_sweep(args) -> int:
    values = parse_values(args.values)
    cfg = resolve_config(args)
    for raw in values:  # reject bad values before any training starts
        cfg.replace(**{args.param: parse_value(args.param, raw)})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.to_text(), args.param, raw, args.data_dir, str(out)) for raw in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "mae", "wmrr"])
        for r in rows:
            w.writerow([r["value"], r["mae"], r["wmrr"]])
    print((out / "sweep.csv").read_text(), end="")
    return EXIT_OK


def cmd_check(args, checks: Optional[dict] = None) -> int:
    from .diagnostics import run_checks, write_check_report
    results = run_checks(checks, echo=print)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = write_check_report(out / "check_report.json", results)
    err = rep["max_rel_gradient_error"]
    print(f"max relative gradient error: {err:.3e}" if err is not None else "max relative gradient error: n/a")
    print("all checks passed" if rep["passed"] else "some checks FAILED")
    return EXIT_OK if rep["passed"] else EXIT_NUMERICAL


def cmd_histogram(args) -> int:
    split = load_split(args.data_dir, seed=args.seed)
    quads = getattr(split, args.split)
    rows = confidence_histogram(quads, args.bin_width)
    write_histogram_csv(args.out, rows)
    print(f"wrote {len(rows)} bins to {args.out}")
    return EXIT_OK


# parser ---------------------------------------------------------------------

def _add_config_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--preset", choices=("nl27k", "cn15k"), help="start from a preset (default nl27k)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sscdl", description="Semi-supervised confidence distribution learning for UKGs.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"sscdl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    _add_config_args(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train an ablated model")
    _add_config_args(a)
    a.add_argument("--mode", required=True, choices=("no_cdl", "no_mst"))
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data-dir", required=True)
    e.add_argument("--out-dir")
    e.add_argument("--splits", default="valid,test", help="comma-separated subset of train,valid,test")
    e.add_argument("--raw", action="store_true", help="raw ranking (no filtering of known tails)")
    e.add_argument("--low-confidence", action="store_true", help="also report items with confidence < cutoff")
    e.add_argument("--cutoff", type=float, default=0.5)
    e.add_argument("--rank-dump", action="store_true", help="write per-query ranks as CSV")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="sensitivity sweep over one hyper-parameter")
    _add_config_args(s)
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--jobs", type=int, default=1, help="points run in parallel processes")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="run built-in numerical self checks")
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_check)

    h = sub.add_parser("histogram", help="confidence histogram of one split as CSV")
    h.add_argument("--data-dir", required=True)
    h.add_argument("--split", default="train", choices=("train", "valid", "test"))
    h.add_argument("--bin-width", type=float, default=0.1)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_histogram)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"sscdl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError, SamplingError, CheckpointError) as exc:
        print(f"sscdl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"sscdl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
