"""Command-line entry point: ``sdim-logit <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 runtime or numerical error,
3 acceptance-check failure (``pipeline --check``).

Environment: ``SDIM_LOGIT_OUT`` overrides the output directory,
``SDIM_LOGIT_THREADS`` caps BLAS threads.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import pipeline as pl
from .autodiff import AutodiffError
from .base import DivergenceError, export_logits, load_base, save_base, train_base
from .config import ConfigError, load_config
from .data import load_dataset, load_logit_dataset, save_logit_dataset
from .evaluation import format_table
from .head import load_head, save_head, train_head
from .io import FormatError, dump_json
from .rejection import CalibrationError, calibrate, load_thresholds, save_thresholds

log = logging.getLogger("sdim_logit")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _out_dir(arg: str | None, default: str | None = None) -> Path:
    env = os.environ.get("SDIM_LOGIT_OUT")
    chosen = env or arg or default
    if not chosen:
        raise UsageError("no output location: pass --out or set SDIM_LOGIT_OUT")
    return Path(chosen)


def _require(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: {p} does not exist")
    return p


def cmd_gen_data(args) -> int:
    cfg, _ = load_config(args.config)
    out = _out_dir(args.out)
    data = pl.generate_data(cfg)
    pl.write_data(data, out)
    log.info("wrote %d datasets to %s", len(data), out)
    return EXIT_OK


def cmd_train_base(args) -> int:
    cfg, _ = load_config(args.config)
    data = pl.read_data(_require(args.data, "--data"))
    out = _out_dir(args.out)
    base = train_base(data["train"], cfg.base_train_config(), data["test"])
    save_base(base, out / "base.json")
    dump_json({"format_version": 1, **base.summary, "param_count": base.param_count},
              out / "base_summary.json")
    print(json.dumps({k: base.summary[k] for k in ("train_accuracy", "test_accuracy")}))
    return EXIT_OK


def cmd_export_logits(args) -> int:
    base = load_base(_require(args.base, "--base"))
    src = _require(args.data, "--data")
    out = _out_dir(args.out)
    files = sorted(src.glob("*.csv")) if src.is_dir() else [src]
    for f in files:
        save_logit_dataset(export_logits(base, load_dataset(f)), out / f.name)
    log.info("exported logits for %d datasets to %s", len(files), out)
    return EXIT_OK


def cmd_train_head(args) -> int:
    cfg, _ = load_config(args.config)
    if args.logits:
        source = load_logit_dataset(_require(args.logits, "--logits"))
    elif args.base and args.data:
        base = load_base(_require(args.base, "--base"))
        source = export_logits(base, pl.read_data(_require(args.data, "--data"))["train"])
    else:
        raise UsageError("train-head needs --logits FILE, or --base CKPT with --data DIR")
    out = _out_dir(args.out)
    head = train_head(source, cfg.loss_config(), cfg.head.rep_dim, cfg.head.hidden)
    save_head(head, out / "head.json")
    dump_json({"format_version": 1, "epochs": [asdict(b) for b in head.trace]}, out / "loss_trace.json")
    print(json.dumps({"head_param_count": head.param_count, "final_loss": head.trace[-1].total}))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    head = load_head(_require(args.head, "--head"))
    source = load_logit_dataset(_require(args.logits, "--logits"))
    table = calibrate(head, source, args.percentile)
    out = _out_dir(args.out)
    path = out if out.suffix == ".json" else out / f"thresholds_{pl.pct_tag(args.percentile)}.json"
    save_thresholds(table, path)
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, _ = load_config(args.config)
    head = load_head(_require(args.head, "--head"))
    tables = {}
    for t in args.thresholds or []:
        table = load_thresholds(_require(t, "--thresholds"))
        tables[table.percentile] = table
    if not tables:
        raise UsageError("--thresholds is required (repeatable)")
    base = load_base(_require(args.base, "--base"))
    data = pl.read_data(_require(args.data, "--data"))
    reports = pl.evaluate_all(cfg, base, head, tables, data, (args.condition,))
    rows = reports[args.condition]
    out = _out_dir(args.out)
    pl.write_reports({args.condition: rows}, out)
    print(format_table(rows))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg, text = load_config(args.config)
    out = _out_dir(args.out, cfg.output_dir)
    result = pl.run_pipeline(cfg, out, text)
    s = result.summary
    for name in ("clean", "corrupt", "adv", "ood"):
        print(f"\n[{name}]")
        print(format_table(result.reports[name]))
    print(f"\nbase accuracy {s['base_test_accuracy']:.4f}  head accuracy {s['head_test_accuracy']:.4f}")
    print(f"head parameters {s['head_param_count']} (analytic {s['head_param_count_analytic']}), "
          f"base parameters {s['base_param_count']}, overhead ratio {s['overhead_ratio']:.4f} "
          f"(full-scale regime {s['reference_overhead_ratio']:.5f})")
    for name, ok in s["checks"].items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
    if args.check and not s["all_checks_passed"]:
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdim-logit", description="Generative classifier with rejection on frozen logits.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write clean, corrupted and OOD datasets")
    s.add_argument("--config", help="YAML run config (defaults if omitted)")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-base", help="train and freeze the base classifier")
    s.add_argument("--config")
    s.add_argument("--data", help="directory written by gen-data")
    s.add_argument("--out", help="output directory for base.json")
    s.set_defaults(func=cmd_train_base)

    s = sub.add_parser("export-logits", help="write logit files for one dataset file or a directory")
    s.add_argument("--base", help="base checkpoint (base.json)")
    s.add_argument("--data", help="dataset CSV or directory of them")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_export_logits)

    s = sub.add_parser("train-head", help="train the generative head on frozen logits")
    s.add_argument("--logits", help="labeled logit CSV")
    s.add_argument("--base", help="base checkpoint, used with --data instead of --logits")
    s.add_argument("--data", help="dataset directory, used with --base")
    s.add_argument("--config")
    s.add_argument("--out", help="output directory for head.json and loss_trace.json")
    s.set_defaults(func=cmd_train_head)

    s = sub.add_parser("calibrate", help="compute per-class rejection thresholds")
    s.add_argument("--head")
    s.add_argument("--logits", help="labeled logit CSV (training split)")
    s.add_argument("--percentile", type=float, default=1.0)
    s.add_argument("--out", help="output directory or .json path")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("eval", help="evaluate rejection on one condition")
    s.add_argument("condition", choices=["clean", "corrupt", "adv", "ood"])
    s.add_argument("--head")
    s.add_argument("--thresholds", action="append", help="threshold file (repeatable)")
    s.add_argument("--base")
    s.add_argument("--data", help="directory written by gen-data")
    s.add_argument("--config")
    s.add_argument("--out", help="report directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="run every stage end to end")
    s.add_argument("--config")
    s.add_argument("--out", help="output directory (default: output_dir from the config)")
    s.add_argument("--check", action="store_true", help="exit 3 if any acceptance property fails")
    s.set_defaults(func=cmd_pipeline)
    return p


def _limit_threads():
    n = os.environ.get("SDIM_LOGIT_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, AutodiffError, CalibrationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
