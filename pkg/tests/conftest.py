from __future__ import annotations

import time

import numpy as np
import pytest

from sdim_logit.base import BaseTrainConfig, export_logits, train_base
from sdim_logit.config import RunConfig
from sdim_logit.data import make_clusters
from sdim_logit.head import LossConfig, train_head
from sdim_logit.pipeline import run_pipeline
from sdim_logit.rejection import calibrate

# acceptance verdicts, printed once at the end of the session
VERDICTS: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def verdict():
    """Record one criterion's verdict, print it, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        VERDICTS.append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


SMALL = {
    "seed": 0,
    "data": {"n_classes": 3, "per_class_train": 60, "per_class_test": 30, "ood_n": 60},
    "base": {"epochs": 30},
    "head": {"epochs": 15, "batch_size": 16, "rep_dim": 8, "hidden": 8},
    "attack": {"epsilons": [0.0, 0.05], "iterations": 3},
    "severities": [1, 5],
}


@pytest.fixture(scope="session")
def small_models():
    """A quickly trained (base, head, train, test) on a 3-class problem."""
    train = make_clusters(3, 80, 2, 0.01, 5, "train")
    test = make_clusters(3, 40, 2, 0.01, 5, "test")
    base = train_base(train, BaseTrainConfig(epochs=40, seed=5), test)
    head = train_head(export_logits(base, train), LossConfig(epochs=8, batch_size=32, seed=5),
                      rep_dim=8, hidden=8)
    return base, head, train, test


@pytest.fixture(scope="session")
def small_table(small_models):
    base, head, train, _ = small_models
    return calibrate(head, export_logits(base, train), 1.0)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The default pipeline, run once per session: (result, output dir, seconds)."""
    out = tmp_path_factory.mktemp("default_run")
    t0 = time.perf_counter()
    result = run_pipeline(RunConfig().validate(), out)
    return result, out, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
