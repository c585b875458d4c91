# reporting.py

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, TextIO

import numpy as np

from .helper.errors import ParameterError, StorageError

logger = logging.getLogger(__name__)

# Every metrics record carries exactly these keys, in this order.
METRIC_FIELDS = (
    "epoch",
    "phase",
    "lr",
    "loss_total",
    "inter_constraint",
    "inter_diversity",
    "intra",
    "aug_gt",
    "kd_kl",
    "feat_contrastive",
    "student_ce",
    "train_acc",
    "test_acc",
    "ensemble_acc",
    "diversity",
    "diversity_inter_form",
    "diversity_intra_form",
    "raw_variance",
    "mean_inter_deg",
    "mean_intra_deg",
    "kl_bound_lhs",
    "kl_bound_rhs",
    "bound_slack",
    "gamma",
    "gate_active_fraction",
)

COMPARISON_FIELDS = (
    "mode",
    "ablation",
    "seed",
    "test_acc",
    "diversity",
    "mean_inter_deg",
    "mean_intra_deg",
    "gate_frac",
)


def metrics_row(epoch: int, phase: str, **values: Any) -> Dict[str, Any]:
    unknown = set(values) - set(METRIC_FIELDS)
    if unknown:
        raise ParameterError(f"unknown metric fields: {sorted(unknown)}")
    row: Dict[str, Any] = {name: None for name in METRIC_FIELDS}
    row.update(values, epoch=int(epoch), phase=str(phase))
    return row


def report_metrics(report) -> Dict[str, Any]:
    """Metric fields taken from a DiversityReport (or None)."""
    if report is None:
        return {}
    return {
        "diversity": report.diversity_direct,
        "diversity_inter_form": report.inter_form,
        "diversity_intra_form": report.intra_form,
        "raw_variance": report.raw_variance,
        "mean_inter_deg": report.mean_inter_angle_deg,
        "mean_intra_deg": report.mean_intra_angle_deg,
        "kl_bound_lhs": report.kl_bound_lhs,
        "kl_bound_rhs": report.kl_bound_rhs,
        "bound_slack": report.bound_slack,
    }


@dataclass
class RunMetrics:
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def append(self, row: Mapping[str, Any]) -> None:
        if tuple(row) != METRIC_FIELDS:
            raise ParameterError("metrics row does not match the metrics schema")
        previous = [r["epoch"] for r in self.rows if r["phase"] == row["phase"]]
        if previous and row["epoch"] <= previous[-1]:
            raise ParameterError(f"epoch {row['epoch']} is not after {previous[-1]} in phase {row['phase']}")
        self.rows.append(dict(row))

    def phase(self, name: str) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row["phase"] == name]

    def last(self, name: str | None = None) -> Dict[str, Any] | None:
        rows = self.phase(name) if name else self.rows
        return rows[-1] if rows else None


def _jsonable(value: Any) -> Any:
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def write_metrics_row(row: Mapping[str, Any], sink: TextIO) -> None:
    """Append one JSON line and push it to disk."""
    line = json.dumps({key: _jsonable(value) for key, value in row.items()}, allow_nan=False)
    try:
        sink.write(line + "\n")
        sink.flush()
        if hasattr(sink, "fileno"):
            try:
                os.fsync(sink.fileno())
            except (OSError, ValueError):
                # in-memory sinks have no descriptor
                pass
    except OSError as exc:
        raise StorageError(f"cannot write metrics row: {exc}") from exc


class MetricsWriter:
    """Line-delimited metrics file; one writer per run."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            self._handle = self.path.open("w", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot open metrics file {self.path}: {exc}") from exc

    def __call__(self, row: Mapping[str, Any]) -> None:
        write_metrics_row(row, self._handle)

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> MetricsWriter:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def write_json(payload: Any, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


def write_csv(rows: Iterable[Mapping[str, Any]], fieldnames: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({key: "" if row.get(key) is None else row.get(key) for key in fieldnames})
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


@dataclass
class ComparisonRow:
    mode: str
    ablation: str
    seed: int
    test_acc: float
    diversity: float | None
    mean_inter_deg: float | None
    mean_intra_deg: float | None
    gate_frac: float | None

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def write_metrics_csv(metrics: RunMetrics, path: str | Path) -> Path:
    """Per-epoch table of a run, one column per metrics field."""
    return write_csv(metrics.rows, METRIC_FIELDS, path)


def write_comparison_csv(rows: Sequence[ComparisonRow], path: str | Path) -> Path:
    return write_csv((row.as_dict() for row in rows), COMPARISON_FIELDS, path)


def _mean_std(values: Sequence[float | None]) -> tuple:
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    return float(np.mean(present)), float(np.std(present))


def summarize_comparison(rows: Sequence[ComparisonRow]) -> List[Dict[str, Any]]:
    """Mean and population std over seeds for each (mode, ablation) group, in first-seen order."""
    groups: Dict[tuple, List[ComparisonRow]] = {}
    for row in rows:
        groups.setdefault((row.mode, row.ablation), []).append(row)

    summary = []
    for (mode, ablation), members in groups.items():
        entry: Dict[str, Any] = {"mode": mode, "ablation": ablation, "runs": len(members)}
        for name in ("test_acc", "diversity", "mean_inter_deg", "mean_intra_deg", "gate_frac"):
            mean, std = _mean_std([getattr(member, name) for member in members])
            entry[f"{name}_mean"] = mean
            entry[f"{name}_std"] = std
        summary.append(entry)
    return summary


SUMMARY_FIELDS = ("mode", "ablation", "runs") + tuple(
    f"{name}_{stat}"
    for name in ("test_acc", "diversity", "mean_inter_deg", "mean_intra_deg", "gate_frac")
    for stat in ("mean", "std")
)


SWEEP_FIELDS = ("key", "value", "seed", "test_acc", "diversity")
SWEEP_SUMMARY_FIELDS = ("key", "value", "runs", "test_acc_mean", "test_acc_std", "diversity_mean", "diversity_std")


def summarize_sweep(rows: Sequence[Mapping[str, Any]]) -> List[Dict[str, Any]]:
    """Mean and population std of student accuracy and diversity per swept value."""
    groups: Dict[Any, List[Mapping[str, Any]]] = {}
    for row in rows:
        groups.setdefault(row["value"], []).append(row)

    summary = []
    for value, members in groups.items():
        entry: Dict[str, Any] = {"key": members[0]["key"], "value": value, "runs": len(members)}
        for name in ("test_acc", "diversity"):
            mean, std = _mean_std([member[name] for member in members])
            entry[f"{name}_mean"] = mean
            entry[f"{name}_std"] = std
        summary.append(entry)
    return summary
