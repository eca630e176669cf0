"""Command-line entry point.

Subcommands: ``assign``, ``train``, ``sweep``, ``oracle-check``, ``bench``.
Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
Verbosity comes from ``LLPDC_LOG`` (error, info, debug).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .classifier import save_checkpoint
from .datagen import (
    BagSpec,
    CsvSchema,
    load_csv,
    make_gaussian_mixture,
    partition_into_bags,
    standardize,
    train_test_split,
    write_bag_manifest,
)
from .llp_train import EpochMetrics, TrainConfig, train
from .proportion_assign import (
    AssignmentError,
    assign_pseudo_labels,
    check_proportions,
    counts_from_proportions,
    enumerate_optimal,
)

log = logging.getLogger("llpdc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ORACLE_MAX_M, ORACLE_MAX_L = 8, 4
SLOPE_LIMIT = 2.3

DEFAULT_CONFIG = {
    "data": {
        "source": "gaussian",
        "n_classes": 4,
        "dim": 16,
        "n_per_class": 320,
        "separation": 3.0,
        "test_fraction": 0.2,
        "seed": 0,
    },
    "bags": {"bag_size": 64, "seed": 0, "drop_remainder": False},
    "train": {f.name: f.default for f in fields(TrainConfig)},
}


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


def _setup_logging() -> None:
    level = os.environ.get("LLPDC_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "info"
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(args) -> dict:
    """Defaults, then the config file, then command-line flags."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            config = _merge(config, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
    if getattr(args, "seed", None) is not None:
        config["train"]["seed"] = args.seed
        config["bags"]["seed"] = args.seed
        config["data"]["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        config["train"]["lam"] = args.lam
    if getattr(args, "tau", None) is not None:
        config["train"]["tau"] = args.tau
    if getattr(args, "bag_size", None) is not None:
        config["bags"]["bag_size"] = args.bag_size
    if getattr(args, "epochs", None) is not None:
        config["train"]["epochs"] = args.epochs
    data = config["data"]
    if data.get("source") == "csv":
        for key in ("train", "test"):
            if key in data and not Path(data[key]).is_file():
                raise UsageError(f"data file not found: {data[key]}")
        if "train" not in data:
            raise UsageError("csv data source needs a 'train' path")
    elif data.get("source") != "gaussian":
        raise UsageError(f"unknown data source {data.get('source')!r}")
    try:
        TrainConfig(**config["train"])
        BagSpec(**config["bags"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return config


def build_data(config: dict):
    """Train and test datasets, standardised with training statistics."""
    data = config["data"]
    if data["source"] == "gaussian":
        full = make_gaussian_mixture(
            data["n_classes"], data["dim"], data["n_per_class"], data["separation"], data["seed"]
        )
        return standardize(*train_test_split(full, data["test_fraction"], data["seed"]))
    schema = CsvSchema(
        n_classes=data["n_classes"],
        label_column=data.get("label_column", -1),
        label_base=data.get("label_base", 1),
        has_header=data.get("has_header", False),
    )
    train_ds = load_csv(data["train"], schema)
    if "test" in data:
        return train_ds, load_csv(data["test"], schema, stats=(train_ds.mean, train_ds.std))
    return train_ds, None


def run_training(config: dict):
    train_ds, test_ds = build_data(config)
    bags = partition_into_bags(train_ds, BagSpec(**config["bags"]))
    params, history = train(train_ds, bags, TrainConfig(**config["train"]), test=test_ds)
    return params, history, bags


def write_metrics(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EpochMetrics.CSV_FIELDS)
        for m in history:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in m.row()])


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _echo(config: dict, out: Path | None) -> None:
    text = json.dumps(config, indent=2, sort_keys=True)
    log.info("effective configuration:\n%s", text)
    if out is not None:
        (out / "config.json").write_text(text + "\n")


def cmd_assign(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"input is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("input must be a JSON object")
    for key in ("probs", "alpha"):
        if key not in doc:
            raise UsageError(f"missing field {key}")
    _echo({"command": "assign", "input": str(path), "output": args.output}, None)
    try:
        P = np.asarray(doc["probs"], dtype=np.float64)
        alpha = check_proportions(doc["alpha"])
        if P.ndim != 2 or P.shape[0] == 0:
            raise AssignmentError("probs must be a non-empty matrix")
        if np.any(np.abs(P.sum(axis=1) - 1) > 1e-6) or np.any(P < 0):
            raise AssignmentError("each row of probs must be a probability vector")
        result = assign_pseudo_labels(P, counts_from_proportions(alpha, P.shape[0]))
    except (AssignmentError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    text = json.dumps(
        {"labels": (result.labels + 1).tolist(), "neg_log_prob": result.total_neg_log_prob}
    )
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    out = _out_dir(args)
    _echo(config, out)
    params, history, bags = run_training(config)
    write_metrics(history, out / "metrics.csv")
    write_bag_manifest(bags, out / "bags.jsonl")
    save_checkpoint(params, out / "checkpoint.json")
    final = history[-1]
    log.info("final test accuracy %.4f, pseudo-label ratio %.3f", final.test_accuracy, final.pl_ratio)
    return EXIT_OK


def _sweep_cell(config: dict, cell_dir: str):
    _, history, _ = run_training(config)
    Path(cell_dir).mkdir(parents=True, exist_ok=True)
    write_metrics(history, Path(cell_dir) / "metrics.csv")
    return history[-1].test_accuracy


def cmd_sweep(args) -> int:
    lambdas, taus = _float_list(args.lambdas), _float_list(args.taus)
    if not lambdas or not taus:
        raise UsageError("empty sweep grid")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    base = resolve_config(args)
    out = _out_dir(args)
    cells = []
    for lam in lambdas:
        for tau in taus:
            cfg = copy.deepcopy(base)
            cfg["train"].update(lam=lam, tau=tau)
            try:
                TrainConfig(**cfg["train"])
            except ValueError as exc:
                raise UsageError(f"invalid grid cell lambda={lam}, tau={tau}: {exc}") from None
            cells.append((lam, tau, cfg, str(out / "cells" / f"lambda={lam}_tau={tau}")))
    _echo({**base, "sweep": {"lambdas": lambdas, "taus": taus, "workers": args.workers}}, out)

    results = []
    if args.workers == 1:
        for lam, tau, cfg, cell_dir in cells:
            results.append(_try_cell(lambda: _sweep_cell(cfg, cell_dir)))
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_sweep_cell, cfg, cell_dir) for _, _, cfg, cell_dir in cells]
            results = [_try_cell(f.result) for f in futures]

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "tau", "final_accuracy", "status"])
        for (lam, tau, _, _), (acc, status) in zip(cells, results):
            writer.writerow([lam, tau, "" if acc is None else repr(acc), status])
            log.info("lambda=%s tau=%s -> %s", lam, tau, status if acc is None else f"{acc:.4f}")
    return EXIT_OK


def _try_cell(fn):
    try:
        return fn(), "ok"
    except Exception as exc:  # one failed cell must not stop the sweep
        log.error("sweep cell failed: %s", exc)
        return None, f"error: {exc}"


def random_instance(rng, max_m: int, max_l: int):
    m = int(rng.integers(2, max_m + 1))
    l = int(rng.integers(2, max_l + 1))
    P = rng.dirichlet(np.ones(l), size=m)
    counts = np.bincount(rng.integers(0, l, size=m), minlength=l)
    return P, counts


def cmd_oracle_check(args) -> int:
    if args.max_m > ORACLE_MAX_M or args.max_l > ORACLE_MAX_L:
        raise UsageError(f"enumeration guard: need max_m <= {ORACLE_MAX_M} and max_l <= {ORACLE_MAX_L}")
    if args.max_m < 2 or args.max_l < 2 or args.trials < 0:
        raise UsageError("need max_m >= 2, max_l >= 2 and trials >= 0")
    _echo({"command": "oracle-check", "trials": args.trials, "max_m": args.max_m,
           "max_l": args.max_l, "seed": args.seed}, None)
    rng = np.random.default_rng(args.seed)
    passed = 0
    for trial in range(args.trials):
        P, counts = random_instance(rng, args.max_m, args.max_l)
        flow = assign_pseudo_labels(P, counts)
        brute = enumerate_optimal(P, counts)
        ok = (
            abs(flow.total_neg_log_prob - brute.total_neg_log_prob) <= P.shape[0] * 2e-6
            and np.array_equal(flow.labels, brute.labels)
            and np.array_equal(np.bincount(flow.labels, minlength=len(counts)), counts)
        )
        if not ok:
            failing = {
                "trial": trial,
                "probs": P.tolist(),
                "counts": counts.tolist(),
                "flow_labels": flow.labels.tolist(),
                "oracle_labels": brute.labels.tolist(),
                "flow_neg_log_prob": flow.total_neg_log_prob,
                "oracle_neg_log_prob": brute.total_neg_log_prob,
            }
            print(f"FAIL after {passed} passes; failing instance:")
            print(json.dumps(failing))
            return EXIT_FAIL
        passed += 1
    if args.trials == 0:
        print("0 trials run: vacuous pass")
    else:
        print(f"passed {passed}/{args.trials}, failed 0")
    return EXIT_OK


def loglog_slope(ms, seconds) -> float:
    return float(np.polyfit(np.log(ms), np.log(seconds), 1)[0])


def bench_assignment(ms, ls, repeats: int, seed: int = 0):
    """Rows of (m, l, mean seconds, std seconds) for single-bag assignments."""
    rng = np.random.default_rng(seed)
    assign_pseudo_labels(rng.dirichlet(np.ones(2), size=4), np.array([2, 2]))  # JIT warm-up
    rows = []
    for l in ls:
        for m in ms:
            times = []
            for _ in range(repeats):
                P = rng.dirichlet(np.ones(l), size=m)
                counts = counts_from_proportions(np.full(l, 1.0 / l), m)
                t0 = time.perf_counter()
                assign_pseudo_labels(P, counts)
                times.append(time.perf_counter() - t0)
            rows.append((m, l, float(np.mean(times)), float(np.std(times))))
    return rows


def cmd_bench(args) -> int:
    ms, ls = _int_list(args.m), _int_list(args.l)
    if not ms or not ls or args.repeats < 1:
        raise UsageError("bench needs non-empty --m and --l lists and repeats >= 1")
    out = _out_dir(args) if args.out else None
    _echo({"command": "bench", "m": ms, "l": ls, "repeats": args.repeats, "seed": args.seed}, out)
    rows = bench_assignment(ms, ls, args.repeats, args.seed)
    header = ["m", "l", "mean_seconds"] + (["std_seconds"] if args.repeats > 1 else [])
    lines = [header] + [list(r[: len(header)]) for r in rows]
    writer = csv.writer(sys.stdout)
    writer.writerows(lines)
    if out is not None:
        with open(out / "bench.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(lines)
    if len(ms) >= 2:
        for l in ls:
            sel = [r for r in rows if r[1] == l]
            slope = loglog_slope([r[0] for r in sel], [r[2] for r in sel])
            flag = "pass" if slope <= SLOPE_LIMIT else "FAIL"
            print(f"l={l}: log-log slope in m = {slope:.3f} ({flag}, limit {SLOPE_LIMIT})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llpdc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, training: bool = False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if training:
            p.add_argument("--config", default=None, help="JSON run configuration")
            p.add_argument("--lambda", dest="lam", type=float, default=None)
            p.add_argument("--tau", type=float, default=None)
            p.add_argument("--bag-size", type=int, default=None)
            p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("assign", help="pseudo-labels for one bag from a JSON file")
    p.add_argument("input")
    p.add_argument("--output", "-o", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("train", help="one training run")
    common(p, training=True)
    p.set_defaults(func=cmd_train, out="runs/train")

    p = sub.add_parser("sweep", help="grid of training runs over lambda and tau")
    common(p, training=True)
    p.add_argument("--lambdas", default="2,1,0.75,0.5,0.25,0")
    p.add_argument("--taus", default="0.6")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep, out="runs/sweep")

    p = sub.add_parser("oracle-check", help="flow assignment vs brute-force enumeration")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-m", type=int, default=ORACLE_MAX_M)
    p.add_argument("--max-l", type=int, default=ORACLE_MAX_L)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("bench", help="assignment wall time against bag size")
    p.add_argument("--m", default="16,32,64,128")
    p.add_argument("--l", default="10")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out", None) is None and args.command in ("train", "sweep"):
        args.out = f"runs/{args.command}"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"llpdc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
