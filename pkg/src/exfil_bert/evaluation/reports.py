"""Seed-averaged comparison tables built from per-cell metrics bundles."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from ..schemas import MetricsBundle, alpha_label
from .metrics import compare_runs


RANDOM_MODEL = "random"

Row = Dict[str, object]


def pretrained_name(budget: int) -> str:
    return f"pt-{budget}"


class CellResult(BaseModel):
    """One evaluated (model, label fraction, seed) cell."""

    model_config = ConfigDict(protected_namespaces=())

    model_name: str
    pretrain_steps: Optional[int] = None
    fraction: float
    seed: int
    bundle: MetricsBundle


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    present = [float(v) for v in values if v is not None and not math.isnan(float(v))]
    return math.fsum(present) / len(present) if present else None


def _group(results: Sequence[CellResult]) -> Dict[Tuple[str, float], List[CellResult]]:
    groups: Dict[Tuple[str, float], List[CellResult]] = defaultdict(list)
    for result in results:
        groups[(result.model_name, result.fraction)].append(result)
    return groups


def _model_order(results: Sequence[CellResult]) -> List[str]:
    budgets = sorted({r.pretrain_steps for r in results if r.pretrain_steps is not None})
    names = [RANDOM_MODEL] if any(r.model_name == RANDOM_MODEL for r in results) else []
    return names + [pretrained_name(b) for b in budgets]


def _low_fpr_columns(cells: Sequence[CellResult], alphas: Sequence[float], with_fpr: bool) -> Row:
    row: Row = {"n_seeds": len(cells)}
    for alpha in sorted(alphas):
        label = alpha_label(alpha)
        row[f"pauc@{label}"] = _mean(c.bundle.pauc_at(alpha) for c in cells)
    for alpha in sorted(alphas):
        label = alpha_label(alpha)
        row[f"recall@tau_{label}"] = _mean(c.bundle.outcome_at(alpha).recall for c in cells)
        if with_fpr:
            row[f"fpr@tau_{label}"] = _mean(c.bundle.outcome_at(alpha).realized_fpr for c in cells)
    row["brier"] = _mean(c.bundle.brier for c in cells)
    return row


def low_fpr_table(results: Sequence[CellResult], alphas: Sequence[float]) -> List[Row]:
    """Per model at the largest label fraction: pAUC and recall at each frozen tau."""

    if not results:
        return []
    fraction = max(r.fraction for r in results)
    groups = _group(results)
    rows: List[Row] = []
    for name in _model_order(results):
        cells = groups.get((name, fraction))
        if cells:
            rows.append({"model": name, "fraction": fraction, **_low_fpr_columns(cells, alphas, with_fpr=False)})
    return rows


def delta_table(results: Sequence[CellResult], budget: Optional[int] = None) -> List[Row]:
    """Per fraction: pretrained minus random, averaged over seeds present in both."""

    budgets = sorted({r.pretrain_steps for r in results if r.pretrain_steps is not None})
    if not budgets:
        return []
    model = pretrained_name(budget if budget is not None else budgets[0])
    by_key = {(r.model_name, r.fraction, r.seed): r for r in results}
    rows: List[Row] = []
    for fraction in sorted({r.fraction for r in results}):
        deltas = [
            compare_runs(by_key[(model, fraction, seed)].bundle, by_key[(RANDOM_MODEL, fraction, seed)].bundle).row()
            for seed in sorted({r.seed for r in results})
            if (model, fraction, seed) in by_key and (RANDOM_MODEL, fraction, seed) in by_key
        ]
        if not deltas:
            continue
        row: Row = {"fraction": fraction, "model": model, "baseline": RANDOM_MODEL, "n_seeds": len(deltas)}
        for column in deltas[0]:
            row[column] = _mean(d[column] for d in deltas)
        rows.append(row)
    return rows


def budget_table(results: Sequence[CellResult], alphas: Sequence[float]) -> List[Row]:
    """Per fraction and pretraining budget: pAUC, recall and realized FPR."""

    groups = _group(results)
    rows: List[Row] = []
    for fraction in sorted({r.fraction for r in results}):
        for name in _model_order(results):
            if name == RANDOM_MODEL:
                continue
            cells = groups.get((name, fraction))
            if cells:
                rows.append({"fraction": fraction, "model": name, **_low_fpr_columns(cells, alphas, with_fpr=True)})
    return rows


def confusion_report(results: Sequence[CellResult], alphas: Sequence[float]) -> List[Row]:
    """Mean confusion counts at the strictest alpha for every model at the largest fraction."""

    if not results:
        return []
    alpha = min(alphas)
    fraction = max(r.fraction for r in results)
    groups = _group(results)
    rows: List[Row] = []
    for name in _model_order(results):
        cells = groups.get((name, fraction))
        if not cells:
            continue
        outcomes = [c.bundle.outcome_at(alpha) for c in cells]
        row: Row = {"model": name, "fraction": fraction, "alpha": alpha, "n_seeds": len(cells)}
        for field in ("tp", "fp", "tn", "fn"):
            row[field] = _mean(getattr(o.counts, field) for o in outcomes)
        rows.append(row)
    return rows


def _format(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_text(rows: Sequence[Row]) -> str:
    """Fixed-width rendering with 4 decimals."""

    if not rows:
        return "(empty)\n"
    columns = list(rows[0])
    cells = [[_format(row.get(column)) for column in columns] for row in rows]
    widths = [max(len(column), *(len(line[i]) for line in cells)) for i, column in enumerate(columns)]
    lines = ["  ".join(column.ljust(w) for column, w in zip(columns, widths))]
    lines.extend("  ".join(value.rjust(w) for value, w in zip(line, widths)) for line in cells)
    return "\n".join(lines) + "\n"


def write_report(directory: str | Path, name: str, rows: Sequence[Row]) -> Tuple[Path, Path]:
    """Write ``<name>.json`` and ``<name>.csv``; the CSV carries 4-decimal numbers."""

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"{name}.json"
    csv_path = directory / f"{name}.csv"
    json_path.write_text(json.dumps(list(rows), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    columns = list(rows[0]) if rows else []
    with csv_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(column)) for column in columns])
    return json_path, csv_path


def write_all_reports(
    directory: str | Path,
    results: Sequence[CellResult],
    alphas: Sequence[float],
    reference_budget: Optional[int] = None,
) -> Dict[str, Path]:
    tables = {
        "low_fpr": low_fpr_table(results, alphas),
        "pretraining_deltas": delta_table(results, reference_budget),
        "budget_scaling": budget_table(results, alphas),
        "confusion": confusion_report(results, alphas),
    }
    written: Dict[str, Path] = {}
    for name, rows in tables.items():
        written[name], _ = write_report(directory, name, rows)
    return written
