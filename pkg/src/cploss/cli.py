"""Command-line experiments: loss comparisons across horizons and scale ablations.

Examples::

    cploss compare --data ETTh1.csv --lookback 96 --horizon 96,192,336,720 \\
        --loss mse,cp --seeds 0,1,2 --out results/etth1
    cploss ablate --data synthetic --lookback 96 --horizon 96 --scales 1,2,3,4,5 --out results/abl
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from ._validation import ConfigError, DataError
from .data_io import load_csv, synth_heterogeneous, windows
from .filter import max_scales
from .losses import LOSSES
from .train import TrainConfig, evaluate, train, write_history

log = logging.getLogger("cploss")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def load_dataset(data, synth_channels=3, synth_length=8000, synth_seed=0, min_rows=None):
    """``data`` is a CSV path or the literal ``synthetic``."""
    if data == "synthetic":
        return synth_heterogeneous(synth_channels, synth_length, synth_seed), "synthetic"
    if not os.path.exists(data):
        raise DataError(f"data file not found: {data}")
    return load_csv(data, min_rows=min_rows), os.path.abspath(data)


def _dataset_info(ds, source):
    return {
        "name": ds.name,
        "source": source if source == "synthetic" else os.path.basename(source),
        "sha256": ds.content_hash,
        "n_channels": ds.n_channels,
        "n_rows": ds.n_rows,
        "channel_names": list(ds.channel_names),
    }


def _cell_name(loss, horizon, seed, K=None):
    tag = f"{loss}_N{horizon}_s{seed}"
    return tag if K is None else f"{tag}_K{K}"


def _feasible(ds, M, N, strict):
    return all(len(windows(ds, split, M, N, strict_splits=strict)) > 0
               for split in ("train", "val", "test"))


def _run_cell(ds, M, N, config, out_dir, name, save_checkpoints):
    result = train(config, ds, M, N)
    metrics = evaluate(result.model, ds, "test", M, N, strict_splits=config.strict_splits)
    if out_dir:
        write_history(result.history, os.path.join(out_dir, f"history_{name}.csv"))
        if save_checkpoints:
            result.model.save(os.path.join(out_dir, f"model_{name}.bin"))
            if result.filter_params is not None:
                result.filter_params.save(os.path.join(out_dir, f"filter_{name}.bin"))
    cell = {
        "mse": metrics["mse"],
        "mae": metrics["mae"],
        "mse_per_channel": metrics["mse_per_channel"],
        "mae_per_channel": metrics["mae_per_channel"],
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
    }
    if config.loss_kind == "cp":
        cell["K"] = result.K
        cell["n_filter_params"] = result.filter_params.n_params
    return cell


def _map_cells(jobs, fn, tasks):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _mean_over(cells, keys=("mse", "mae")):
    out = {k: float(np.mean([c[k] for c in cells])) for k in keys}
    for k in ("mse_per_channel", "mae_per_channel"):
        out[k] = np.mean([c[k] for c in cells], axis=0).tolist()
    out["n_seeds"] = len(cells)
    return out


def run_compare(ds, M, horizons, losses, seeds, base_config, out_dir=None, jobs=1,
                save_checkpoints=False, source=""):
    """Train every (horizon, loss, seed) cell and average over seeds."""
    start = time.perf_counter()
    tasks, skipped = [], []
    for N in horizons:
        if not _feasible(ds, M, N, base_config.strict_splits):
            log.warning("horizon %d too long for dataset with M=%d; skipping", N, M)
            skipped.append({"horizon": N, "reason": "dataset splits too short"})
            continue
        for loss in losses:
            for seed in seeds:
                tasks.append((N, loss, seed))

    def work(task):
        N, loss, seed = task
        config = replace(base_config, loss_kind=loss, seed=seed)
        name = _cell_name(loss, N, seed)
        log.info("training cell %s", name)
        cell = _run_cell(ds, M, N, config, out_dir, name, save_checkpoints)
        return {"horizon": N, "loss": loss, "seed": seed, **cell}

    cells = _map_cells(jobs, work, tasks)

    summary = []
    for N in horizons:
        for loss in losses:
            group = [c for c in cells if c["horizon"] == N and c["loss"] == loss]
            if group:
                summary.append({"horizon": N, "loss": loss, **_mean_over(group)})
    average = {}
    for loss in losses:
        rows = [s for s in summary if s["loss"] == loss]
        if rows:
            average[loss] = {k: float(np.mean([r[k] for r in rows])) for k in ("mse", "mae")}

    return {
        "kind": "compare",
        "config": {**base_config.to_dict(), "lookback": M, "horizons": list(horizons),
                   "losses": list(losses), "seeds": list(seeds)},
        "dataset": _dataset_info(ds, source),
        "cells": cells,
        "summary": summary,
        "average": average,
        "skipped": skipped,
        "timing": {"wall_clock_seconds": time.perf_counter() - start},
    }


def run_scale_ablation(ds, M, N, scales, seeds, base_config, out_dir=None, jobs=1,
                       source=""):
    start = time.perf_counter()
    k_max = max_scales(N)
    tasks, skipped = [], []
    for K in scales:
        if K > k_max or K < 1:
            log.warning("K=%d infeasible for N=%d (max feasible K=%d); skipping", K, N, k_max)
            skipped.append({"K": K, "max_feasible_K": k_max})
            continue
        for seed in seeds:
            tasks.append((K, seed))

    def work(task):
        K, seed = task
        config = replace(base_config, loss_kind="cp", K=K, seed=seed)
        cell = _run_cell(ds, M, N, config, out_dir, _cell_name("cp", N, seed, K), False)
        return {"K": K, "seed": seed, **cell}

    cells = _map_cells(jobs, work, tasks)
    rows = []
    for K in scales:
        group = [c for c in cells if c["K"] == K]
        if group:
            rows.append({"K": K, "n_filter_params": group[0]["n_filter_params"],
                         **_mean_over(group)})
    return {
        "kind": "ablation",
        "config": {**base_config.to_dict(), "lookback": M, "horizon": N,
                   "scales": list(scales), "seeds": list(seeds)},
        "dataset": _dataset_info(ds, source),
        "cells": cells,
        "rows": rows,
        "skipped": skipped,
        "timing": {"wall_clock_seconds": time.perf_counter() - start},
    }


# output

def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def format_compare_table(report):
    losses = report["config"]["losses"]
    header = f"{'Horizon':>8} | " + " | ".join(f"{l:^17}" for l in losses)
    sub = f"{'':>8} | " + " | ".join(f"{'MSE':>8} {'MAE':>8}" for _ in losses)
    lines = [header, sub, "-" * len(sub)]
    by_key = {(s["horizon"], s["loss"]): s for s in report["summary"]}
    for N in report["config"]["horizons"]:
        if not any((N, l) in by_key for l in losses):
            continue
        cells = []
        for l in losses:
            s = by_key.get((N, l))
            cells.append(f"{s['mse']:>8.3f} {s['mae']:>8.3f}" if s else f"{'-':>8} {'-':>8}")
        lines.append(f"{N:>8} | " + " | ".join(cells))
    avg = report["average"]
    lines.append("-" * len(sub))
    lines.append(f"{'Avg':>8} | " + " | ".join(
        f"{avg[l]['mse']:>8.3f} {avg[l]['mae']:>8.3f}" if l in avg else f"{'-':>8} {'-':>8}"
        for l in losses))
    return "\n".join(lines)


def format_ablation_table(report):
    lines = [f"{'K':>3} {'MSE':>8} {'MAE':>8} {'params':>7}"]
    for r in report["rows"]:
        lines.append(f"{r['K']:>3} {r['mse']:>8.3f} {r['mae']:>8.3f} {r['n_filter_params']:>7}")
    return "\n".join(lines)


def write_compare_outputs(report, out_dir):
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(dumps_report(report))
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "loss", "mse", "mae", "n_seeds"])
        for s in report["summary"]:
            w.writerow([s["horizon"], s["loss"], repr(s["mse"]), repr(s["mae"]), s["n_seeds"]])
        for loss, a in report["average"].items():
            w.writerow(["avg", loss, repr(a["mse"]), repr(a["mae"]), ""])


def write_ablation_outputs(report, out_dir):
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(dumps_report(report))
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "mse", "mae", "n_filter_params", "n_seeds"])
        for r in report["rows"]:
            w.writerow([r["K"], repr(r["mse"]), repr(r["mae"]), r["n_filter_params"], r["n_seeds"]])


# argument parsing

def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _loss_list(text):
    values = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in values if v not in LOSSES]
    if bad or not values:
        raise argparse.ArgumentTypeError(f"losses must be among {LOSSES}, got {text!r}")
    return values


def _common(p):
    p.add_argument("--data", required=True, help="CSV path, or 'synthetic'")
    p.add_argument("--lookback", type=int, default=96, help="input window length M")
    p.add_argument("--kernel", type=int, default=5, help="odd filter kernel size")
    p.add_argument("--seeds", type=_int_list, default=[0], help="comma-separated seeds")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--filter-lr-multiplier", type=float, default=1.0)
    p.add_argument("--clip-norm", type=float, default=5.0, help="0 disables clipping")
    p.add_argument("--detach-target", action="store_true",
                   help="no filter gradient through the target branch")
    p.add_argument("--strict-splits", action="store_true",
                   help="val/test lookback may not reach into the previous split")
    p.add_argument("--shared-weights", action="store_true",
                   help="one linear map for all channels")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker threads")
    p.add_argument("--synth-channels", type=int, default=3)
    p.add_argument("--synth-length", type=int, default=8000)
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="cploss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    cmp_ = sub.add_parser("compare", help="compare losses across horizons")
    _common(cmp_)
    cmp_.add_argument("--horizon", type=_int_list, default=[96, 192, 336, 720],
                      help="comma-separated horizons N")
    cmp_.add_argument("--loss", type=_loss_list, default=["mse", "cp"],
                      help="comma-separated subset of mse,mae,cp")
    cmp_.add_argument("--scales", type=int, default=5, help="pyramid depth K")
    cmp_.add_argument("--save-checkpoints", action="store_true",
                      help="write model and filter binaries per cell")

    abl = sub.add_parser("ablate", help="cp loss scale ablation")
    _common(abl)
    abl.add_argument("--horizon", type=int, default=96)
    abl.add_argument("--scales", type=_int_list, default=[1, 2, 3, 4, 5],
                     help="comma-separated pyramid depths")
    return parser


def _base_config(args, K):
    return TrainConfig(
        loss_kind="cp", K=K, k=args.kernel, learning_rate=args.lr, batch_size=args.batch,
        max_epochs=args.epochs, patience=args.patience, detach_target=args.detach_target,
        filter_lr_multiplier=args.filter_lr_multiplier, clip_norm=args.clip_norm,
        shared_weights=args.shared_weights, strict_splits=args.strict_splits,
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            config = _base_config(args, args.scales)
        else:
            config = _base_config(args, max(args.scales))
        if args.lookback < 1:
            raise ConfigError("--lookback must be positive")
        horizons = args.horizon if args.command == "compare" else [args.horizon]
        ds, source = load_dataset(args.data, args.synth_channels, args.synth_length,
                                  args.synth_seed, min_rows=args.lookback + min(horizons))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        if args.command == "compare":
            report = run_compare(ds, args.lookback, args.horizon, args.loss, args.seeds, config,
                                 args.out, args.jobs, args.save_checkpoints, source)
            print(format_compare_table(report))
            if args.out:
                write_compare_outputs(report, args.out)
        else:
            report = run_scale_ablation(ds, args.lookback, args.horizon, args.scales, args.seeds,
                                        config, args.out, args.jobs, source)
            print(format_ablation_table(report))
            if args.out:
                write_ablation_outputs(report, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
