"""Run metrics, selection-quality ratios and the metrics file format."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import InputError

logger = logging.getLogger(__name__)

__all__ = [
    "COLUMNS",
    "EvalRecord",
    "RoundRecord",
    "RunMetrics",
    "corrupted_selection_ratio",
    "domain_selection_ratio",
    "export_metrics",
    "read_metrics",
]

# the first eleven columns are the fixed contract; the last four carry the
# per-round selection summary
COLUMNS = (
    "kind",
    "step",
    "round_index",
    "selector",
    "metric",
    "val_acc",
    "test_acc",
    "corrupted_ratio",
    "target_ratio",
    "degenerate_flag",
    "seed",
    "selected_ids",
    "score_min",
    "score_median",
    "score_max",
)
_DELIMITERS = {"csv": ",", "tsv": "\t"}


@dataclass
class EvalRecord:
    step: int
    val_acc: float
    test_acc: float
    kind: str = field(default="EVAL", init=False)


@dataclass
class RoundRecord:
    step: int
    round_index: int
    corrupted_ratio: float | None
    target_ratio: float | None
    degenerate: bool
    selected_ids: tuple = ()
    score_min: float | None = None
    score_median: float | None = None
    score_max: float | None = None
    kind: str = field(default="ROUND", init=False)


@dataclass
class RunMetrics:
    selector: str = ""
    metric: str = ""
    seed: int | None = None
    records: list = field(default_factory=list)
    # in-memory only; not written to the metrics file
    selection_rounds: list = field(default_factory=list)
    round_ground_truth: list = field(default_factory=list)
    rollouts: dict = field(default_factory=dict)

    @property
    def evals(self) -> list:
        return [r for r in self.records if r.kind == "EVAL"]

    @property
    def rounds(self) -> list:
        return [r for r in self.records if r.kind == "ROUND"]

    def final_eval(self) -> EvalRecord | None:
        ev = self.evals
        return ev[-1] if ev else None

    def mean_corrupted_ratio(self) -> float | None:
        vals = [r.corrupted_ratio for r in self.rounds if r.corrupted_ratio is not None]
        return float(np.mean(vals)) if vals else None

    def mean_target_ratio(self) -> float | None:
        vals = [r.target_ratio for r in self.rounds if r.target_ratio is not None]
        return float(np.mean(vals)) if vals else None

    def to_rows(self) -> list[dict]:
        rows = []
        for r in self.records:
            row = dict.fromkeys(COLUMNS)
            row.update(kind=r.kind, step=r.step, selector=self.selector, metric=self.metric, seed=self.seed)
            if r.kind == "EVAL":
                row.update(val_acc=r.val_acc, test_acc=r.test_acc)
            else:
                row.update(
                    round_index=r.round_index,
                    corrupted_ratio=r.corrupted_ratio,
                    target_ratio=r.target_ratio,
                    degenerate_flag=int(bool(r.degenerate)),
                    selected_ids=" ".join(str(i) for i in r.selected_ids),
                    score_min=r.score_min,
                    score_median=r.score_median,
                    score_max=r.score_max,
                )
            rows.append(row)
        return rows


def corrupted_selection_ratio(selected_ids: Iterable[int], ground_truth) -> float | None:
    """Fraction of selected ids that are corrupted.

    ``ground_truth`` is the set of corrupted ids from the private sidecar; when
    it is ``None`` the metric is omitted (returns ``None``) and a warning logged.
    """
    selected = list(selected_ids)
    if ground_truth is None:
        logger.warning("ground-truth sidecar missing; corrupted ratio omitted")
        return None
    if not selected:
        raise InputError("no selected ids")
    bad = set(ground_truth)
    return sum(1 for i in selected if i in bad) / len(selected)


def domain_selection_ratio(selected_ids: Iterable[int], tag, problems_by_id: dict) -> float:
    selected = list(selected_ids)
    if not selected:
        raise InputError("no selected ids")
    return sum(1 for i in selected if problems_by_id[i].domain_tag == tag) / len(selected)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def export_metrics(metrics: RunMetrics, path, format: str = "csv") -> Path:
    """Write the header plus one line per record; identical runs give identical bytes."""
    if format not in _DELIMITERS:
        raise InputError(f"unknown metrics format {format!r}")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, delimiter=_DELIMITERS[format], lineterminator="\n")
            w.writerow(COLUMNS)
            for row in metrics.to_rows():
                w.writerow([_fmt(row[c]) for c in COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write metrics file {path}: {exc}") from exc
    return path


def _opt(s: str, conv):
    return None if s == "" else conv(s)


def read_metrics(path, format: str | None = None) -> RunMetrics:
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix == ".tsv" else "csv"
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=_DELIMITERS[format])
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise InputError(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    m = RunMetrics()
    for row in rows:
        m.selector = row["selector"]
        m.metric = row["metric"]
        m.seed = _opt(row["seed"], int)
        if row["kind"] == "EVAL":
            m.records.append(EvalRecord(int(row["step"]), float(row["val_acc"]), float(row["test_acc"])))
        elif row["kind"] == "ROUND":
            ids = tuple(int(i) for i in row["selected_ids"].split()) if row["selected_ids"] else ()
            m.records.append(
                RoundRecord(
                    step=int(row["step"]),
                    round_index=int(row["round_index"]),
                    corrupted_ratio=_opt(row["corrupted_ratio"], float),
                    target_ratio=_opt(row["target_ratio"], float),
                    degenerate=row["degenerate_flag"] == "1",
                    selected_ids=ids,
                    score_min=_opt(row["score_min"], float),
                    score_median=_opt(row["score_median"], float),
                    score_max=_opt(row["score_max"], float),
                )
            )
        else:
            raise InputError(f"{path}: unknown record kind {row['kind']!r}")
    return m


def records_equal(a: RunMetrics, b: RunMetrics) -> bool:
    """Field-wise equality of the exported part of two runs (NaN-safe)."""
    ra, rb = a.to_rows(), b.to_rows()
    if len(ra) != len(rb):
        return False
    for x, y in zip(ra, rb):
        for c in COLUMNS:
            u, v = x[c], y[c]
            if isinstance(u, float) and isinstance(v, float) and math.isnan(u) and math.isnan(v):
                continue
            if _fmt(u) != _fmt(v):
                return False
    return True
