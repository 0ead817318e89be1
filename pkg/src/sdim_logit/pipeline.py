"""End-to-end run: data -> frozen base -> head -> thresholds -> reports.

Each stage is a plain function so the CLI subcommands and :func:`run_pipeline`
share one code path.
"""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .base import BaseModel, accuracy, export_logits, save_base, train_base
from .config import RunConfig, dump_config
from .data import (Dataset, LogitDataset, corrupt_gaussian, load_dataset, make_clusters,
                   make_ood, save_dataset, save_logit_dataset)
from .evaluation import (EvalReport, evaluate, evaluate_adversarial_sweep, evaluate_ood,
                         evaluate_severity_sweep, export_report)
from .head import Head, head_param_count, save_head, train_head
from .io import dump_json
from .rejection import ThresholdTable, calibrate, decide_batch, save_thresholds

log = logging.getLogger(__name__)

#: Head-to-base parameter ratio of the full-scale setting (12k additional on a 21M model).
REFERENCE_OVERHEAD_RATIO = 12e3 / 21e6


def generate_data(cfg: RunConfig) -> dict[str, Dataset]:
    d = cfg.data
    train = make_clusters(d.n_classes, d.per_class_train, d.input_dim, d.spread, cfg.seed, "train")
    test = make_clusters(d.n_classes, d.per_class_test, d.input_dim, d.spread, cfg.seed, "test")
    out = {"train": train, "test": test}
    for s in cfg.severities:
        out[f"corrupted_s{s}"] = corrupt_gaussian(test, s, cfg.seed)
    for kind in d.ood_kinds:
        out[f"ood_{kind}"] = make_ood(kind, d.ood_n, d.input_dim, cfg.seed, in_means=train.means,
                                      n_clusters=d.ood_clusters, spread=d.spread,
                                      min_distance=d.ood_min_distance, n_classes=d.n_classes)
    return out


def write_data(datasets: dict[str, Dataset], directory: os.PathLike | str) -> None:
    for name, ds in datasets.items():
        save_dataset(ds, Path(directory) / f"{name}.csv")


def read_data(directory: os.PathLike | str) -> dict[str, Dataset]:
    directory = Path(directory)
    found = {p.stem: load_dataset(p) for p in sorted(directory.glob("*.csv"))}
    for required in ("train", "test"):
        if required not in found:
            raise FileNotFoundError(f"{directory} has no {required}.csv (run gen-data first)")
    return found


def pct_tag(p: float) -> str:
    return f"p{p:g}"


def calibration_rejected_fraction(head: Head, table: ThresholdTable, source: LogitDataset) -> np.ndarray:
    """Per class, the share of correctly classified calibration rows that ``decide`` rejects."""
    pred, _, accepted = decide_batch(head, table, source.logits)
    out = np.zeros(head.n_classes)
    for y in range(head.n_classes):
        mask = (pred == source.labels) & (source.labels == y)
        out[y] = float(np.mean(~accepted[mask])) if mask.any() else np.nan
    return out


@dataclass
class PipelineResult:
    config: RunConfig
    data: dict[str, Dataset]
    base: BaseModel
    head: Head
    logits: dict[str, LogitDataset]
    tables: dict[float, ThresholdTable]
    reports: dict[str, list[EvalReport]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


CONDITIONS = ("clean", "corrupt", "adv", "ood")


def evaluate_all(cfg: RunConfig, base: BaseModel, head: Head, tables: dict[float, ThresholdTable],
                 data: dict[str, Dataset], conditions=CONDITIONS) -> dict[str, list[EvalReport]]:
    test = data["test"]
    test_logits = export_logits(base, test)
    reports: dict[str, list[EvalReport]] = {c: [] for c in conditions}
    a = cfg.attack
    for p, table in tables.items():
        if "clean" in reports:
            reports["clean"].append(evaluate(head, table, test_logits, "clean"))
        if "corrupt" in reports:
            reports["corrupt"] += evaluate_severity_sweep(base, head, table, test, cfg.severities, cfg.seed)
        if "adv" in reports:
            reports["adv"] += evaluate_adversarial_sweep(base, head, table, test, a.epsilons,
                                                         a.step_size, a.iterations, a.target)
        if "ood" not in reports:
            continue
        for kind in cfg.data.ood_kinds:
            ood = data.get(f"ood_{kind}")
            if ood is None:
                continue
            reports["ood"].append(evaluate_ood(head, table, export_logits(base, ood), ood.provenance))
    return reports


def write_reports(reports: dict[str, list[EvalReport]], directory: os.PathLike | str) -> None:
    for name, rows in reports.items():
        for fmt in ("json", "csv"):
            export_report(rows, Path(directory) / f"{name}.{fmt}", fmt)


def run_pipeline(cfg: RunConfig, out: os.PathLike | str, config_text: str = "") -> PipelineResult:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config_text or dump_config(cfg), encoding="utf-8")
    dump_json(cfg.to_dict(), out / "config.resolved.json")

    log.info("generating data")
    data = generate_data(cfg)
    write_data(data, out / "data")

    log.info("training base classifier")
    base = train_base(data["train"], cfg.base_train_config(), data["test"])
    save_base(base, out / "base.json")
    base_hash = base.param_hash()

    logits = {name: export_logits(base, ds) for name, ds in data.items()
              if name in ("train", "test") or ds.is_ood}
    for name, ld in logits.items():
        save_logit_dataset(ld, out / "logits" / f"{name}.csv")

    log.info("training head")
    head = train_head(logits["train"], cfg.loss_config(), cfg.head.rep_dim, cfg.head.hidden)
    save_head(head, out / "head.json")
    dump_json({"format_version": 1, "epochs": [asdict(b) for b in head.trace]}, out / "loss_trace.json")
    if base.param_hash() != base_hash:
        raise RuntimeError("base parameters changed during head training")

    tables = {p: calibrate(head, logits["train"], p) for p in cfg.percentiles}
    for p, t in tables.items():
        save_thresholds(t, out / f"thresholds_{pct_tag(p)}.json")

    log.info("evaluating")
    reports = evaluate_all(cfg, base, head, tables, data)
    write_reports(reports, out / "reports")

    result = PipelineResult(cfg, data, base, head, logits, tables, reports)
    result.summary = summarize(result)
    dump_json(result.summary, out / "summary.json")
    return result


def summarize(r: PipelineResult) -> dict:
    cfg = r.config
    test = r.logits["test"]
    head_acc = float(np.mean(r.head.predict(test.logits) == test.labels))
    analytic = head_param_count(cfg.data.n_classes, cfg.head.rep_dim, cfg.head.hidden)
    checks = acceptance_checks(r, head_acc, analytic)
    return {
        "format_version": 1,
        "base_test_accuracy": accuracy(r.base, r.data["test"]),
        "head_test_accuracy": head_acc,
        "base_param_count": r.base.param_count,
        "head_param_count": r.head.param_count,
        "head_param_count_analytic": analytic,
        "overhead_ratio": r.head.param_count / r.base.param_count,
        "reference_overhead_ratio": REFERENCE_OVERHEAD_RATIO,
        "thresholds": {pct_tag(p): t.to_dict()["thresholds"] for p, t in r.tables.items()},
        "checks": checks,
        "all_checks_passed": all(checks.values()),
    }


def _rows(reports: list[EvalReport], percentile: float, prefix: str) -> list[EvalReport]:
    return [x for x in reports if x.percentile == percentile and x.condition.startswith(prefix)]


def _strictly(values, increasing: bool) -> bool:
    pairs = list(zip(values[:-1], values[1:]))
    return all(b > a for a, b in pairs) if increasing else all(b < a for a, b in pairs)


def acceptance_checks(r: PipelineResult, head_acc: float, analytic_count: int) -> dict[str, bool]:
    """The run-level acceptance properties checked by ``pipeline --check``."""
    base_acc = accuracy(r.base, r.data["test"])
    checks = {
        "base_accuracy_ge_95": base_acc >= 0.95,
        "head_within_1.5_points_of_base": abs(head_acc - base_acc) <= 0.015,
        "param_count_matches_analytic": r.head.param_count == analytic_count,
    }

    band_ok = True
    for p, table in r.tables.items():
        frac = calibration_rejected_fraction(r.head, table, r.logits["train"])
        lo, hi = max(0.0, p - 1) / 100, (p + 1) / 100
        band_ok &= bool(np.all((frac >= lo) & (frac <= hi)))
    checks["calibration_self_consistency"] = band_ok

    ps = sorted(r.tables)
    subset_ok = True
    test = r.logits["test"]
    for lo_p, hi_p in zip(ps[:-1], ps[1:]):
        _, _, acc_lo = decide_batch(r.head, r.tables[lo_p], test.logits)
        _, _, acc_hi = decide_batch(r.head, r.tables[hi_p], test.logits)
        subset_ok &= bool(np.all(acc_lo | ~acc_hi))
    checks["rejection_set_monotone_in_percentile"] = subset_ok

    p1 = ps[0]
    sev = _rows(r.reports["corrupt"], p1, "corrupted")
    if len(sev) >= 2:
        acc = [x.acc_without_rejection for x in sev]
        rej = [x.rejection_rate for x in sev]
        checks["corruption_accuracy_strictly_decreasing"] = _strictly(acc, increasing=False)
        checks["corruption_rejection_strictly_increasing"] = _strictly(rej, increasing=True)
        checks["corruption_acc_left_ge_acc"] = all(
            x.acc_on_left is not None and x.acc_on_left >= x.acc_without_rejection for x in sev)
        last = sev[-1]
        checks["corruption_improvement_ge_5_at_max_severity"] = (
            last.acc_on_left is not None and last.acc_on_left - last.acc_without_rejection >= 0.05)

    adv = _rows(r.reports["adv"], p1, "adversarial")
    if adv:
        rej = [x.rejection_rate for x in adv]
        checks["adversarial_rejection_nondecreasing"] = all(b >= a for a, b in zip(rej[:-1], rej[1:]))
        checks["adversarial_rejection_ge_60_at_max_eps"] = rej[-1] >= 0.60

    uni = _rows(r.reports["ood"], p1, "ood(uniform)")
    if uni:
        checks["ood_uniform_detection_ge_90"] = uni[0].rejection_rate >= 0.90
    return checks
