"""Per-class threshold calibration and the decision function with rejection."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import LogitDataset
from .head import Head
from .io import FORMAT_VERSION, FormatError, dump_json, load_json


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ThresholdTable:
    thresholds: np.ndarray
    percentile: float
    per_class_n: tuple[int, ...]

    @property
    def n_classes(self) -> int:
        return self.thresholds.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ThresholdTable):
            return NotImplemented
        return (self.percentile == other.percentile and self.per_class_n == other.per_class_n
                and np.array_equal(self.thresholds, other.thresholds))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "percentile": self.percentile,
            "thresholds": [float(t) for t in self.thresholds],
            "per_class_n": list(self.per_class_n),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ThresholdTable:
        try:
            thresholds = np.asarray(doc["thresholds"], dtype=np.float64)
            table = cls(thresholds, doc["percentile"], tuple(int(n) for n in doc["per_class_n"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad threshold file: {exc}") from None
        if thresholds.ndim != 1 or len(table.per_class_n) != thresholds.size:
            raise FormatError("thresholds and per_class_n must be equal-length lists")
        return table


@dataclass(frozen=True)
class Decision:
    label: int | None
    score: float
    threshold: float

    @property
    def rejected(self) -> bool:
        return self.label is None


def nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ``ceil(p/100 * n)``-th smallest value (1-based)."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = values.size
    if n == 0:
        raise ValueError("percentile of an empty set")
    if not 0 < p <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {p}")
    # exact decimal arithmetic so that e.g. p=7, n=100 gives rank 7, not 8
    rank = math.ceil(Fraction(repr(float(p))) * n / 100)
    return float(values[max(rank, 1) - 1])


def calibrate(head: Head, source: LogitDataset, percentile: float = 1.0) -> ThresholdTable:
    """Threshold per class from correctly classified labeled samples."""
    if not source.labeled:
        raise CalibrationError("calibration needs labeled logits")
    if source.n_classes != head.n_classes:
        raise CalibrationError(f"logits have C={source.n_classes}, head has C={head.n_classes}")
    logp = head.log_probs(source.logits)
    pred = np.argmax(logp, axis=1)
    correct = pred == source.labels
    thresholds, counts = [], []
    for y in range(head.n_classes):
        scores = logp[correct & (source.labels == y), y]
        if scores.size == 0:
            raise CalibrationError(f"class {y} has no correctly classified calibration samples")
        thresholds.append(nearest_rank(scores, percentile))
        counts.append(int(scores.size))
    return ThresholdTable(np.array(thresholds), percentile, tuple(counts))


def decide_batch(head: Head, table: ThresholdTable, logits) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised decisions: ``(predicted class, score, accepted mask)``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if logits.shape[1] != head.n_classes or table.n_classes != head.n_classes:
        raise ValueError(
            f"logits of width {logits.shape[1]}, table for C={table.n_classes}, head for C={head.n_classes}"
        )
    logp = head.log_probs(logits)
    pred = np.argmax(logp, axis=1)
    score = logp[np.arange(len(pred)), pred]
    return pred, score, score >= table.thresholds[pred]


def decide(head: Head, table: ThresholdTable, f) -> Decision:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (head.n_classes,):
        raise ValueError(f"expected a logit vector of length {head.n_classes}, got shape {f.shape}")
    pred, score, accepted = decide_batch(head, table, f[None, :])
    y = int(pred[0])
    return Decision(y if accepted[0] else None, float(score[0]), float(table.thresholds[y]))


def save_thresholds(table: ThresholdTable, path: os.PathLike | str) -> None:
    dump_json(table.to_dict(), path)


def load_thresholds(path: os.PathLike | str) -> ThresholdTable:
    try:
        return ThresholdTable.from_dict(load_json(path))
    except FormatError as exc:
        if exc.path is None:
            raise FormatError(str(exc), path) from None
        raise
