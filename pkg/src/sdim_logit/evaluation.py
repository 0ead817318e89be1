"""Accuracy / rejection-rate reports over clean, corrupted, adversarial and OOD inputs."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, fields
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import AttackConfig, attack_dataset
from .base import BaseModel, export_logits
from .data import Dataset, LogitDataset, corrupt_gaussian
from .head import Head
from .io import FORMAT_VERSION, FormatError, SchemaVersionError
from .rejection import ThresholdTable, decide_batch

# n_left / n_correct_left trail the documented columns so rows round-trip exactly
CSV_COLUMNS = (
    "condition", "percentile", "n_total", "n_rejected",
    "acc_without_rejection", "rejection_rate", "acc_on_left",
    "n_left", "n_correct_left",
)


@dataclass(frozen=True)
class EvalReport:
    """One row of a rejection table.

    Rates are fractions in [0, 1]. Accuracy fields are ``None`` for OOD
    conditions (no labels) and ``acc_on_left`` is ``None`` when every sample
    was rejected. Rows ingested from published tables carry rates only, so
    their counts are ``None``.
    """

    condition: str
    percentile: float
    n_total: int | float | None
    n_rejected: int | float | None
    n_left: int | float | None
    n_correct_left: int | float | None
    acc_without_rejection: float | None
    rejection_rate: float
    acc_on_left: float | None

    @classmethod
    def from_rates(cls, condition: str, percentile: float, acc_without_rejection,
                   rejection_rate, acc_on_left) -> EvalReport:
        return cls(condition, percentile, None, None, None, None,
                   acc_without_rejection, rejection_rate, acc_on_left)

    def to_dict(self) -> dict:
        return asdict(self)


def _report(condition, percentile, pred, accepted, labels) -> EvalReport:
    n = int(pred.size)
    if n == 0:
        raise ValueError("cannot evaluate an empty set")
    n_rej = int(n - np.count_nonzero(accepted))
    n_left = n - n_rej
    if labels is None:
        return EvalReport(condition, percentile, n, n_rej, n_left, None, None, n_rej / n, None)
    correct = pred == labels
    n_correct_left = int(np.count_nonzero(correct & accepted))
    return EvalReport(
        condition, percentile, n, n_rej, n_left, n_correct_left,
        float(np.count_nonzero(correct)) / n,
        n_rej / n,
        n_correct_left / n_left if n_left else None,
    )


def evaluate(head: Head, thresholds: ThresholdTable, data: LogitDataset,
             condition: str = "clean") -> EvalReport:
    if not data.labeled:
        raise ValueError("evaluate needs labeled logits; use evaluate_ood for unlabeled sets")
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty set")
    pred, _, accepted = decide_batch(head, thresholds, data.logits)
    return _report(condition, thresholds.percentile, pred, accepted, data.labels)


def evaluate_ood(head: Head, thresholds: ThresholdTable, data: LogitDataset,
                 condition: str = "ood") -> EvalReport:
    """Detection rate = rejection rate on an unlabeled OOD set."""
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty set")
    if np.any(data.labels >= 0):
        raise ValueError("evaluate_ood got labeled rows; OOD sets must be unlabeled")
    pred, _, accepted = decide_batch(head, thresholds, data.logits)
    return _report(condition, thresholds.percentile, pred, accepted, None)


def mean_report(reports: Sequence[EvalReport], condition: str = "mean") -> EvalReport:
    """Unweighted column means; a column with any ``None`` stays ``None``."""
    if not reports:
        raise ValueError("mean of no reports")
    percentiles = {r.percentile for r in reports}
    if len(percentiles) != 1:
        raise ValueError(f"cannot average reports at different percentiles {sorted(percentiles)}")
    values = {}
    for f in fields(EvalReport):
        if f.name in ("condition", "percentile"):
            continue
        column = [getattr(r, f.name) for r in reports]
        values[f.name] = None if any(v is None for v in column) else float(np.mean(column))
    return EvalReport(condition, reports[0].percentile, **values)


def evaluate_severity_sweep(base: BaseModel, head: Head, thresholds: ThresholdTable,
                            clean_test: Dataset, severities: Sequence[int] = (1, 2, 3, 4, 5),
                            seed: int = 0) -> list[EvalReport]:
    """One report per severity followed by their mean row."""
    rows = []
    for s in severities:
        corrupted = corrupt_gaussian(clean_test, s, seed)
        rows.append(evaluate(head, thresholds, export_logits(base, corrupted), corrupted.provenance))
    return rows + [mean_report(rows)]


def evaluate_adversarial_sweep(base: BaseModel, head: Head, thresholds: ThresholdTable,
                               clean_test: Dataset, epsilons: Sequence[float],
                               step_size: float = 0.01, iterations: int = 40,
                               target: str = "base_ce") -> list[EvalReport]:
    rows = []
    for eps in epsilons:
        if eps == 0:
            attacked = replace_provenance(clean_test, f"adversarial({target},{eps!r})")
        else:
            cfg = AttackConfig(eps, step_size, iterations, target)
            attacked = attack_dataset(base, clean_test, cfg, head)
        rows.append(evaluate(head, thresholds, export_logits(base, attacked), attacked.provenance))
    return rows


def replace_provenance(d: Dataset, provenance: str) -> Dataset:
    return Dataset(d.inputs, d.labels, d.n_classes, provenance, d.means)


# ---------------------------------------------------------------------------
# export / import


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _parse_number(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def export_report(reports: Sequence[EvalReport], path: os.PathLike | str, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        doc = {"format_version": FORMAT_VERSION, "reports": [r.to_dict() for r in reports]}
        path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])
        path.write_text(buf.getvalue(), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r} (expected json or csv)")


def read_report(path: os.PathLike | str, fmt: str | None = None) -> list[EvalReport]:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt == "json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("format_version") != FORMAT_VERSION:
            raise SchemaVersionError(f"unsupported format_version {doc.get('format_version')!r}", path)
        return [EvalReport(**r) for r in doc["reports"]]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise FormatError(f"CSV header must be {','.join(CSV_COLUMNS)}", path, 1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            raise FormatError(f"expected {len(CSV_COLUMNS)} fields, found {len(row)}", path, lineno)
        cond, *rest = row
        values = dict(zip(CSV_COLUMNS[1:], (_parse_number(v) for v in rest)))
        out.append(EvalReport(condition=cond, **values))
    return out


def format_percent(x: float | None, places: int = 2) -> str:
    """Render a percentage with round-half-even at ``places`` decimals."""
    if x is None:
        return "-"
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_EVEN))


def format_table(reports: Sequence[EvalReport], scale: float = 100.0) -> str:
    """Plain-text table, rates shown as percentages."""
    head = f"{'condition':<28} {'pct':>4} {'acc w/o rej':>11} {'rej rate':>9} {'acc left':>9}"
    lines = [head, "-" * len(head)]
    for r in reports:
        acc = None if r.acc_without_rejection is None else r.acc_without_rejection * scale
        left = None if r.acc_on_left is None else r.acc_on_left * scale
        lines.append(
            f"{r.condition:<28} {r.percentile:>4g} {format_percent(acc):>11} "
            f"{format_percent(r.rejection_rate * scale):>9} {format_percent(left):>9}"
        )
    return "\n".join(lines)
