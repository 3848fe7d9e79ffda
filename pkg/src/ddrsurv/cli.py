"""Command-line entry point: ``ddrsurv {simulate, estimate, report}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
Every output records the seed, the configuration hash and the dataset hash.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .causal import EffectReport
from .data import Dataset, load_csv, write_csv
from .estimators import ESTIMATORS, run_estimator
from .exceptions import (
    ConvergenceError,
    DatasetMismatchError,
    DDRSurvError,
    DegenerateError,
    ParameterError,
)
from .kaplan_meier import km_fit
from .simulation import SimConfig, generate
from .survival_math import write_curve_csv

__all__ = ["main", "build_parser", "load_config_file", "merge_reports", "EXIT_CODES"]

EXIT_CODES = {"ok": 0, "config": 2, "numeric": 3, "io": 4}

_SIM_FIELDS = {f.name: f.type for f in dataclasses.fields(SimConfig)}
_RUN_KEYS = {"n_boot": int, "estimator": str, "hte": str, "jobs": int,
             "epochs": int, "lr": float, "batch_size": int}


class ConfigError(DDRSurvError, ValueError):
    """Bad command-line or configuration-file setting."""


def _cast(key, value):
    if key in _RUN_KEYS:
        kind = _RUN_KEYS[key]
    else:
        kind = {"int": int, "float": float, "str": str}[_SIM_FIELDS[key]]
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _SIM_FIELDS and key not in _RUN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _cast(key, value)
    return out


def _settings(args) -> dict:
    """Configuration file values overridden by explicit flags."""
    cfg = load_config_file(args.config) if args.config else {}
    for key in ("seed", "rule", "censoring", "n_boot", "estimator", "hte", "jobs"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _sim_config(settings) -> SimConfig:
    return SimConfig(**{k: v for k, v in settings.items() if k in _SIM_FIELDS})


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _log(msg):
    print(msg, flush=True)


# -- simulate ------------------------------------------------------------------

def _simulate(settings, out: Path):
    cfg = _sim_config(settings)
    ds, truth = generate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = write_csv(ds, out / "dataset.csv")
    # hash the on-disk data so later commands that reload it agree
    ds = load_csv(path)
    info = truth.to_dict()
    info.update(seed=cfg.seed, config_hash=cfg.config_hash(), dataset_hash=ds.content_hash())
    with open(out / "truth.json", "w") as fh:
        json.dump(info, fh, indent=2)
        fh.write("\n")
    return ds, truth, cfg


def cmd_simulate(args) -> int:
    settings = _settings(args)
    out = Path(args.out)
    ds, truth, cfg = _simulate(settings, out)
    c = truth.to_dict()["counts"]
    _log(f"seed={cfg.seed} config_hash={cfg.config_hash()} dataset_hash={ds.content_hash()}")
    _log(f"generated={c['generated']} treated={c['treated']} control={c['control']} "
         f"truncated={c['truncated']} censored={c['censored']} "
         f"censored_retained={c['censored_retained']} tau={truth.tau:.6g}")
    _log(f"wrote {out / 'dataset.csv'} and {out / 'truth.json'}")
    return 0


# -- estimate ------------------------------------------------------------------

def _nn_config(settings):
    return {k: settings[k] for k in ("epochs", "lr", "batch_size") if k in settings}


def _one_estimate(tag, path, seed, n_boot, config_hash, hte, nn_config):
    ds = load_csv(path)
    return run_estimator(tag, ds, seed, n_boot, config_hash=config_hash, hte=hte,
                         nn_config=nn_config)


def _write_km(ds: Dataset, out: Path, dataset_hash, seed):
    entry = ds.tau if np.any(ds.tau > 0) else None
    for arm, name in ((1, "treated"), (0, "control")):
        m = ds.a == arm
        curve = km_fit(ds.t_obs[m], ds.delta[m], None if entry is None else entry[m])
        path = out / f"km_{name}.csv"
        write_curve_csv(curve, path)
        with open(path, "a") as fh:
            fh.write(f"# seed={seed} dataset_hash={dataset_hash}\n")


def cmd_estimate(args) -> int:
    settings = _settings(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        path = Path(args.data)
        ds = load_csv(path)
    else:
        ds, _, _ = _simulate(settings, out)
        path = out / "dataset.csv"
    seed = settings.get("seed", 0)
    n_boot = settings.get("n_boot", 100)
    hte = settings.get("hte", "prediction")
    tag = settings.get("estimator", "all")
    tags = list(ESTIMATORS) if tag == "all" else [tag]
    for t in tags:
        if t not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {t!r}; expected one of {ESTIMATORS} or 'all'")
    nn_config = _nn_config(settings)
    run_cfg = {k: v for k, v in settings.items() if k not in ("estimator", "jobs")}
    if not args.data:
        run_cfg = {**dataclasses.asdict(_sim_config(settings)), **run_cfg}
    config_hash = _hash(run_cfg)
    dataset_hash = ds.content_hash()
    _log(f"seed={seed} config_hash={config_hash} dataset_hash={dataset_hash} n_boot={n_boot}")
    _write_km(ds, out, dataset_hash, seed)

    jobs = max(1, settings.get("jobs", 1))
    call = (str(path), seed, n_boot, config_hash, hte, nn_config)
    reports = []
    if jobs > 1 and len(tags) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tags))) as pool:
            futures = {t: pool.submit(_one_estimate, t, *call) for t in tags}
            for t in tags:
                reports.append(_run_stage(t, futures[t].result))
    else:
        for t in tags:
            reports.append(_run_stage(t, lambda t=t: _one_estimate(t, *call)))
    for rep in reports:
        rep.to_json(out / f"report_{rep.estimator}.json")
        rep.write_hte_csv(out / f"hte_{rep.estimator}.csv")
        _log(f"{rep.estimator:>9}: ATE={rep.ate:.4f} SD={rep.ate_sd:.4f}")
    write_compare(reports, out / "compare.csv")
    _log(f"wrote reports to {out}")
    return 0


def _run_stage(tag, fn):
    try:
        return fn()
    except DDRSurvError as exc:
        exc.stage = f"estimate:{tag}"
        raise


# -- report --------------------------------------------------------------------

def merge_reports(reports):
    """Check that all reports share one dataset hash; returns them unchanged."""
    hashes = sorted({r.dataset_hash for r in reports})
    if len(hashes) > 1:
        raise DatasetMismatchError("reports come from different datasets: " + " vs ".join(hashes))
    return list(reports)


def write_compare(reports, path):
    reports = merge_reports(reports)
    width = max((len(r.cate) for r in reports), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "ate", "ate_sd"] + [f"d{k + 1}" for k in range(width)]
                   + ["seed", "config_hash", "dataset_hash"])
        for r in reports:
            row = r.csv_row() + [""] * (width - len(r.cate))
            w.writerow(row + [r.seed, r.config_hash, r.dataset_hash])
    return path


def cmd_report(args) -> int:
    reports = [EffectReport.from_json(p) for p in args.reports]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_compare(reports, out / "compare.csv")
    for r in reports:
        _log(f"{r.estimator:>9}: ATE={r.ate:.4f} SD={r.ate_sd:.4f}")
    _log(f"wrote {out / 'compare.csv'}")
    return 0


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddrsurv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--rule", choices=("and", "or"))
        p.add_argument("--censoring", choices=("rate", "mean"))
        p.add_argument("--config", metavar="FILE", help="key=value settings file")
        p.add_argument("--out", default=".", metavar="DIR")

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run estimators with bootstrap errors")
    common(p)
    p.add_argument("--data", metavar="CSV", help="dataset to analyse (default: simulate one)")
    p.add_argument("--estimator", help=f"one of {', '.join(ESTIMATORS)} or 'all'")
    p.add_argument("--n-boot", dest="n_boot", type=int)
    p.add_argument("--hte", choices=("prediction", "decile"))
    p.add_argument("--jobs", type=int, help="estimators run in parallel processes")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("report", help="merge reports into a comparison table")
    p.add_argument("reports", nargs="+", metavar="REPORT_JSON")
    p.add_argument("--out", default=".", metavar="DIR")
    p.set_defaults(func=cmd_report)
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, (ConvergenceError, DegenerateError)) or (
            isinstance(exc, DDRSurvError) and isinstance(exc, RuntimeError)):
        return EXIT_CODES["numeric"]
    if isinstance(exc, (ConfigError, ParameterError, DatasetMismatchError, DDRSurvError)):
        return EXIT_CODES["config"]
    if isinstance(exc, OSError):
        return EXIT_CODES["io"]
    return EXIT_CODES["numeric"]


def _report_warnings(caught):
    """One stderr line per distinct warning text, with its count."""
    counts = Counter(str(w.message) for w in caught)
    for msg, k in counts.items():
        print(f"warning: {msg}" + (f" (x{k})" if k > 1 else ""), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            code = args.func(args)
        except (DDRSurvError, OSError, FloatingPointError) as exc:
            stage = getattr(exc, "stage", args.command)
            print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
            code = _exit_code(exc)
    _report_warnings(caught)
    return code


if __name__ == "__main__":
    sys.exit(main())
