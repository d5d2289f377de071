"""Strategy sweeps and their CSV/JSON artifacts.

A sweep runs the centralized baseline and every requested strategy on each
distribution mode, all from the same seed, and writes:

``rounds.csv``
    one row per fold and round for every run (the baseline included, with
    strategy ``central``), enough to rebuild every curve and table cell;
``table.csv`` / ``table.json``
    final metric, rounds-to-target and speedup per (mode, strategy);
``manifest.json``
    the resolved configuration.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import federation, metrics
from .config import RunManifest
from .errors import FedLAError

log = logging.getLogger(__name__)

ROUNDS_COLUMNS = [
    "run_id", "mode", "strategy", "fold", "round", "eval_metric",
    "train_loss_mean", "selected_clients", "weights",
]
CENTRAL = "central"
BASELINES = ("fedavg", "fedprox")


def fmt_float(x: float) -> str:
    return repr(float(x))


def target_label(t: float) -> str:
    return f"{t:g}"


@dataclass
class TableRow:
    mode: str
    strategy: str
    final_metric: Optional[float]
    rounds_to_target: Dict[float, Optional[int]] = field(default_factory=dict)
    speedup: Dict[float, Optional[float]] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class ComparisonTable:
    target_labels: List[float]
    resolved_targets: Dict[str, List[float]]  # mode -> absolute target per label
    rows: List[TableRow]

    def row(self, mode, strategy) -> TableRow:
        for r in self.rows:
            if r.mode == mode and r.strategy == strategy:
                return r
        raise KeyError((mode, strategy))

    @property
    def failed(self):
        return [r for r in self.rows if r.error is not None]


def speedup(baseline_rounds: Optional[int], rounds: Optional[int]) -> Optional[float]:
    if baseline_rounds is None or rounds is None:
        return None
    return baseline_rounds / rounds


def fill_speedups(rows: Sequence[TableRow], labels: Sequence[float]) -> None:
    """Speedup vs FedAvg, or vs FedProx where FedAvg never reaches the target."""
    by_strategy = {r.strategy: r for r in rows if r.error is None}
    for i, label in enumerate(labels):
        base = None
        for name in BASELINES:
            b = by_strategy.get(name)
            if b is not None and b.rounds_to_target.get(label) is not None:
                base = b.rounds_to_target[label]
                break
        for r in rows:
            if r.strategy == CENTRAL or r.error is not None:
                continue
            r.speedup[label] = speedup(base, r.rounds_to_target.get(label))


def resolve_targets(manifest: RunManifest, central_final: Optional[float]) -> List[float]:
    if manifest.target_mode == "absolute":
        return list(manifest.targets)
    if central_final is None:
        return [float("nan")] * len(manifest.targets)
    return [t * central_final for t in manifest.targets]


def _round_rows(run_id, mode, strategy, fold_records):
    for recs in fold_records:
        for r in recs:
            yield {
                "run_id": run_id,
                "mode": mode,
                "strategy": strategy,
                "fold": r.fold,
                "round": r.round_index,
                "eval_metric": fmt_float(r.eval_metric),
                "train_loss_mean": fmt_float(r.train_loss_mean),
                "selected_clients": ";".join(str(c) for c in r.selected_clients),
                "weights": ";".join(fmt_float(r.weights[c]) for c in r.selected_clients),
            }


def run_sweep(manifest: RunManifest, write: bool = True, progress=None):
    """Run every (mode, strategy) cell with shared seeds; returns ``(table, round_rows)``.

    A failing cell is recorded in the table and the sweep moves on.
    """
    labels = list(manifest.targets)
    rows: List[TableRow] = []
    round_rows: List[dict] = []
    resolved: Dict[str, List[float]] = {}
    for mode in manifest.modes:
        cfg = replace(manifest.config, mode=mode, targets=())
        folds = federation.build_folds(cfg)
        mode_rows = []
        central_final = None
        try:
            central = federation.run_centralized_baseline(cfg, folds)
            central_final = central.final_metric
            round_rows.extend(_round_rows(f"{mode}-{CENTRAL}", mode, CENTRAL, central.fold_records))
            mode_rows.append(TableRow(mode, CENTRAL, central_final))
        except FedLAError as exc:
            log.error("%s/%s failed: %s", mode, CENTRAL, exc)
            mode_rows.append(TableRow(mode, CENTRAL, None, error=str(exc)))
        targets = resolve_targets(manifest, central_final)
        resolved[mode] = targets
        for strategy in manifest.strategies:
            if progress:
                progress(mode, strategy)
            run_cfg = replace(cfg, strategy=strategy, targets=tuple(targets))
            try:
                result = federation.run_experiment(run_cfg, folds)
            except FedLAError as exc:
                log.error("%s/%s failed: %s", mode, strategy, exc)
                mode_rows.append(TableRow(mode, strategy, None, error=str(exc)))
                continue
            round_rows.extend(_round_rows(f"{mode}-{strategy}", mode, strategy, result.fold_records))
            curve = result.curve
            mode_rows.append(
                TableRow(
                    mode,
                    strategy,
                    result.final_metric,
                    {lab: metrics.rounds_to_target(curve, t) for lab, t in zip(labels, targets)},
                )
            )
        fill_speedups(mode_rows, labels)
        rows.extend(mode_rows)
    table = ComparisonTable(labels, resolved, rows)
    if write:
        write_artifacts(manifest, table, round_rows)
    return table, round_rows


def _cell(value, kind):
    if value is None:
        return "x"
    return str(value) if kind == "eg" else fmt_float(value)


def table_csv(table: ComparisonTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["mode", "strategy", "final_metric"]
    for lab in table.target_labels:
        header += [f"eg_at_{target_label(lab)}", f"speedup_at_{target_label(lab)}"]
    w.writerow(header)
    for r in table.rows:
        if r.error is not None:
            w.writerow([r.mode, r.strategy, "failed"] + ["failed"] * (2 * len(table.target_labels)))
            continue
        line = [r.mode, r.strategy, fmt_float(r.final_metric)]
        for lab in table.target_labels:
            if r.strategy == CENTRAL:
                line += ["-", "-"]
            else:
                line += [_cell(r.rounds_to_target.get(lab), "eg"), _cell(r.speedup.get(lab), "speedup")]
        w.writerow(line)
    return buf.getvalue()


def table_json(table: ComparisonTable) -> dict:
    return {
        "targets": [target_label(t) for t in table.target_labels],
        "resolved_targets": table.resolved_targets,
        "rows": [
            {
                "mode": r.mode,
                "strategy": r.strategy,
                "final_metric": r.final_metric,
                "error": r.error,
                "eg_at": {target_label(k): v for k, v in r.rounds_to_target.items()},
                "speedup_at": {target_label(k): v for k, v in r.speedup.items()},
            }
            for r in table.rows
        ],
    }


def rounds_csv(round_rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ROUNDS_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(round_rows)
    return buf.getvalue()


def write_artifacts(manifest: RunManifest, table: ComparisonTable, round_rows: Sequence[dict]) -> None:
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rounds.csv").write_text(rounds_csv(round_rows))
    (out / "table.csv").write_text(table_csv(table))
    if "json" in manifest.formats:
        (out / "table.json").write_text(json.dumps(table_json(table), indent=2, sort_keys=True) + "\n")
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def table_from_rounds_csv(text: str, targets: Sequence[float], target_mode: str = "relative") -> ComparisonTable:
    """Rebuild the comparison table from ``rounds.csv`` content alone."""
    runs: Dict[tuple, Dict[int, Dict[int, float]]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["mode"], row["strategy"])
        runs.setdefault(key, {}).setdefault(int(row["fold"]), {})[int(row["round"])] = float(row["eval_metric"])
    modes = list(dict.fromkeys(m for m, _ in runs))
    rows, resolved = [], {}
    for mode in modes:
        curves = {}
        for (m, strategy), folds in runs.items():
            if m != mode:
                continue
            rounds = sorted(next(iter(folds.values())))
            curves[strategy] = [
                (r, federation.fold_mean([folds[f][r] for f in sorted(folds)])) for r in rounds
            ]
        central_final = curves[CENTRAL][-1][1] if CENTRAL in curves else None
        if target_mode == "absolute":
            abs_targets = list(targets)
        else:
            abs_targets = [t * central_final for t in targets] if central_final is not None else [float("nan")] * len(targets)
        resolved[mode] = abs_targets
        mode_rows = []
        for strategy, curve in curves.items():
            rtt = {} if strategy == CENTRAL else {
                lab: metrics.rounds_to_target(curve, t) for lab, t in zip(targets, abs_targets)
            }
            mode_rows.append(TableRow(mode, strategy, curve[-1][1], rtt))
        fill_speedups(mode_rows, list(targets))
        rows.extend(mode_rows)
    return ComparisonTable(list(targets), resolved, rows)
