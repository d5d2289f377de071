"""Command-line front end.

    fedla run --config sweep.yaml --strategy fedavg,fedla --mode noniid --seed 3 --out results/
    fedla partition --mode noniid --seed 3 --fold 0
    fedla map --detections dets.txt --ground-truth gts.txt --num-classes 2
    fedla config --config sweep.yaml
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import federation, metrics, report
from .config import MODES, parse_config
from .data import partition_report_csv
from .errors import FedLAError

log = logging.getLogger("fedla")


def _add_common(p):
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES, help="restrict to one distribution mode")


def _overrides(args):
    over = {"seed": args.seed}
    if getattr(args, "mode", None):
        over["modes"] = [args.mode]
    for name in ("strategy", "targets", "target_mode", "out", "workers", "global_epochs", "local_epochs"):
        value = getattr(args, name, None)
        if value is None:
            continue
        key = {"strategy": "strategies", "out": "output_dir"}.get(name, name)
        over[key] = value
    return over


def build_parser():
    parser = argparse.ArgumentParser(prog="fedla", description="Federated label-aware aggregation simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a strategy sweep and write CSV/JSON tables")
    _add_common(run)
    run.add_argument("--strategy", help="comma-separated strategies, e.g. fedla,fedprox_la")
    run.add_argument("--targets", help="comma-separated target metric levels")
    run.add_argument("--target-mode", choices=("relative", "absolute"))
    run.add_argument("--out", type=Path, help="output directory")
    run.add_argument("--workers", type=int, help="threads for client training within a round")
    run.add_argument("--global-epochs", type=int)
    run.add_argument("--local-epochs", type=int)

    part = sub.add_parser("partition", help="print the client x class count matrix for one fold")
    _add_common(part)
    part.add_argument("--fold", type=int, default=0)
    part.add_argument("--out", type=Path, help="write CSV here instead of stdout")

    mp = sub.add_parser("map", help="mAP of detections against ground truth (line-delimited text)")
    mp.add_argument("--detections", type=Path, required=True)
    mp.add_argument("--ground-truth", type=Path, required=True)
    mp.add_argument("--num-classes", type=int, required=True)
    mp.add_argument("--iou", type=float, default=0.5)

    cfg = sub.add_parser("config", help="print the fully resolved configuration")
    _add_common(cfg)
    return parser


def cmd_run(args):
    manifest = parse_config(args.config, _overrides(args))
    table, _ = report.run_sweep(manifest, progress=lambda m, s: log.info("running %s / %s", m, s))
    sys.stdout.write(report.table_csv(table))
    log.info("artifacts written to %s", manifest.output_dir)
    return 1 if table.failed else 0


def cmd_partition(args):
    manifest = parse_config(args.config, _overrides(args))
    mode = manifest.modes[0]
    cfg = replace(manifest.config, mode=mode)
    folds = federation.build_folds(cfg)
    if not 0 <= args.fold < len(folds):
        raise FedLAError(f"fold {args.fold} out of range [0, {len(folds)})")
    text = partition_report_csv(folds[args.fold].partitions)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_map(args):
    dets = metrics.read_detections(args.detections.read_text().splitlines())
    gts = metrics.read_ground_truth(args.ground_truth.read_text().splitlines())
    value, per_class = metrics.mean_average_precision(dets, gts, args.num_classes, args.iou, per_class=True)
    for c, ap in per_class.items():
        print(f"AP[class {c}] = {ap:.6f}")
    print(f"mAP@{args.iou:g} = {value:.6f}")
    return 0


def cmd_config(args):
    manifest = parse_config(args.config, _overrides(args))
    yaml.safe_dump(manifest.to_dict(), sys.stdout, sort_keys=False)
    return 0


COMMANDS = {"run": cmd_run, "partition": cmd_partition, "map": cmd_map, "config": cmd_config}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except FedLAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
