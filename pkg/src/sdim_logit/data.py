"""Synthetic toy problems, graded corruptions, OOD sources and file formats.

Datasets are plain arrays: ``inputs`` of shape ``(n, k)`` with every
coordinate in [0, 1], and ``labels`` of shape ``(n,)`` where ``-1`` marks an
unlabeled (OOD) row.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import FORMAT_VERSION, FormatError, dump_json, load_json

NO_LABEL = -1

#: Gaussian noise standard deviation per corruption severity 1..5.
SEVERITY_SIGMA = (0.05, 0.10, 0.20, 0.30, 0.40)

MAX_MEAN_RESAMPLES = 1000

_SPLIT_STREAM = {"train": 1, "test": 2, "calib": 3}


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = "clean"
    means: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(f"inputs {self.inputs.shape} and labels {self.labels.shape} disagree")
        if self.means is not None:
            self.means = np.asarray(self.means, dtype=np.float64)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def is_ood(self) -> bool:
        return self.provenance.startswith("ood")

    @property
    def labeled(self) -> bool:
        return bool(len(self)) and bool(np.all(self.labels >= 0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same_means = (self.means is None and other.means is None) or (
            self.means is not None and other.means is not None
            and np.array_equal(self.means, other.means)
        )
        return (
            self.n_classes == other.n_classes
            and self.provenance == other.provenance
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
            and same_means
        )


@dataclass(eq=False)
class LogitDataset:
    labels: np.ndarray
    logits: np.ndarray
    n_classes: int
    source: str = ""
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != self.n_classes:
            raise ValueError(f"logits shape {self.logits.shape} does not match C={self.n_classes}")
        if self.labels.shape != (self.logits.shape[0],):
            raise ValueError("one label per logit row required")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    def __len__(self) -> int:
        return self.logits.shape[0]

    @property
    def labeled(self) -> bool:
        return bool(len(self)) and bool(np.all(self.labels >= 0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogitDataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.source == other.source
            and self.seed == other.seed
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.logits, other.logits)
        )


# ---------------------------------------------------------------------------
# generators


def _draw_separated_means(rng, n, input_dim, low, high, accept, what):
    means: list[np.ndarray] = []
    resamples = 0
    while len(means) < n:
        cand = rng.uniform(low, high, size=input_dim)
        if accept(cand, means):
            means.append(cand)
            continue
        resamples += 1
        if resamples > MAX_MEAN_RESAMPLES:
            raise ValueError(
                f"could not place {n} {what} after {MAX_MEAN_RESAMPLES} resamples; "
                "use a smaller spread or fewer classes"
            )
    return np.array(means)


def cluster_means(n_classes: int, input_dim: int, spread: float, seed: int) -> np.ndarray:
    """Class means in [0.2, 0.8]^k, pairwise at least ``4 * spread`` apart."""
    rng = np.random.default_rng([seed, 0])
    min_sep = 4.0 * spread

    def far_enough(cand, placed):
        return all(np.linalg.norm(cand - m) >= min_sep for m in placed)

    return _draw_separated_means(rng, n_classes, input_dim, 0.2, 0.8, far_enough, "class means")


def make_clusters(
    n_classes: int,
    per_class: int,
    input_dim: int,
    spread: float,
    seed: int,
    split: str = "train",
) -> Dataset:
    """Isotropic Gaussian blobs around well-separated class means.

    Means depend only on ``seed``; ``split`` picks an independent sample
    stream so train and test sets share the same class geometry.
    """
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    if not spread > 0:
        raise ValueError(f"spread must be positive, got {spread}")
    if split not in _SPLIT_STREAM:
        raise ValueError(f"unknown split {split!r}")
    means = cluster_means(n_classes, input_dim, spread, seed)
    rng = np.random.default_rng([seed, _SPLIT_STREAM[split]])
    labels = np.repeat(np.arange(n_classes), per_class)
    x = means[labels] + rng.normal(0.0, spread, size=(labels.size, input_dim))
    return Dataset(np.clip(x, 0.0, 1.0), labels, n_classes, "clean", means)


def corrupt_gaussian(d: Dataset, severity: int, seed: int) -> Dataset:
    if d.provenance != "clean":
        raise ValueError(f"can only corrupt clean data, got provenance {d.provenance!r}")
    if severity not in range(1, 6):
        raise ValueError(f"severity must be in 1..5, got {severity}")
    # one standard-normal field per seed, scaled per severity: the levels of a
    # sweep differ only in magnitude, not in the random draw
    z = np.random.default_rng([seed, 20]).standard_normal(d.inputs.shape)
    x = np.clip(d.inputs + SEVERITY_SIGMA[severity - 1] * z, 0.0, 1.0)
    return Dataset(x, d.labels.copy(), d.n_classes, f"corrupted({severity})", d.means)


def make_ood(
    kind: str,
    n: int,
    input_dim: int,
    seed: int,
    in_means: np.ndarray | None = None,
    n_clusters: int = 4,
    spread: float = 0.03,
    min_distance: float = 0.15,
    n_classes: int = 0,
) -> Dataset:
    """Out-of-distribution inputs: ``uniform`` noise or ``shifted_clusters``.

    Shifted cluster centres keep at least ``min_distance`` from every
    in-distribution mean, which must be supplied via ``in_means``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng([seed, 10])
    if kind == "uniform":
        x = rng.uniform(0.0, 1.0, size=(n, input_dim))
    elif kind == "shifted_clusters":
        if in_means is None or len(in_means) == 0:
            raise ValueError("shifted_clusters needs the in-distribution means (in_means)")
        in_means = np.asarray(in_means, dtype=np.float64)

        def clear_of_classes(cand, placed):
            return bool(np.all(np.linalg.norm(in_means - cand, axis=1) >= min_distance))

        centres = _draw_separated_means(
            rng, n_clusters, input_dim, 0.1, 0.9, clear_of_classes, "OOD cluster centres"
        )
        which = np.arange(n) % n_clusters
        x = np.clip(centres[which] + rng.normal(0.0, spread, size=(n, input_dim)), 0.0, 1.0)
        return Dataset(x, np.full(n, NO_LABEL), n_classes, f"ood({kind})", centres)
    else:
        raise ValueError(f"unknown OOD kind {kind!r}")
    return Dataset(x, np.full(n, NO_LABEL), n_classes, f"ood({kind})")


# ---------------------------------------------------------------------------
# files


def _meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def _write_rows(path: Path, header: list[str], labels, values) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for y, row in zip(labels.tolist(), values.tolist()):
            w.writerow([str(y)] + [repr(float(v)) for v in row])


def _read_rows(path: Path, prefix: str, width: int | None):
    labels, values = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise FormatError("header must start with 'label'", path, 1)
        n_cols = len(header) - 1
        expected = [f"{prefix}_{i}" for i in range(n_cols)]
        if header[1:] != expected or n_cols == 0:
            raise FormatError(f"header must be label,{prefix}_0,...,{prefix}_<n-1>", path, 1)
        if width is not None and n_cols != width:
            raise FormatError(f"header has {n_cols} value columns, metadata says {width}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_cols + 1:
                raise FormatError(f"expected {n_cols + 1} fields, found {len(row)}", path, lineno)
            if row[0].strip() == "":
                raise FormatError("missing label", path, lineno)
            try:
                y = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise FormatError(f"unparseable value: {exc}", path, lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError("non-finite value", path, lineno)
            labels.append(y)
            values.append(vals)
    values_arr = np.array(values, dtype=np.float64).reshape(len(values), n_cols)
    return np.array(labels, dtype=np.int64), values_arr


def save_logit_dataset(ld: LogitDataset, path: os.PathLike | str) -> None:
    path = Path(path)
    header = ["label"] + [f"logit_{i}" for i in range(ld.n_classes)]
    _write_rows(path, header, ld.labels, ld.logits)
    dump_json(
        {"n_classes": ld.n_classes, "source": ld.source, "seed": ld.seed,
         "format_version": FORMAT_VERSION},
        _meta_path(path),
    )


def load_logit_dataset(path: os.PathLike | str) -> LogitDataset:
    path = Path(path)
    meta = load_json(_meta_path(path))
    n_classes = meta.get("n_classes")
    if not isinstance(n_classes, int) or n_classes < 1:
        raise FormatError(f"bad n_classes {n_classes!r}", _meta_path(path))
    labels, logits = _read_rows(path, "logit", n_classes)
    bad = np.flatnonzero((labels < NO_LABEL) | (labels >= n_classes))
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} outside [-1, {n_classes})", path, int(bad[0]) + 2)
    return LogitDataset(labels, logits, n_classes, meta.get("source", ""), meta.get("seed"))


def save_dataset(d: Dataset, path: os.PathLike | str) -> None:
    path = Path(path)
    header = ["label"] + [f"x_{i}" for i in range(d.input_dim)]
    _write_rows(path, header, d.labels, d.inputs)
    dump_json(
        {"kind": "dataset", "n_classes": d.n_classes, "input_dim": d.input_dim,
         "provenance": d.provenance,
         "means": None if d.means is None else d.means.tolist(),
         "format_version": FORMAT_VERSION},
        _meta_path(path),
    )


def load_dataset(path: os.PathLike | str) -> Dataset:
    path = Path(path)
    meta = load_json(_meta_path(path), kind="dataset")
    labels, inputs = _read_rows(path, "x", meta.get("input_dim"))
    means = meta.get("means")
    return Dataset(inputs, labels, meta["n_classes"], meta["provenance"],
                   None if means is None else np.asarray(means))
