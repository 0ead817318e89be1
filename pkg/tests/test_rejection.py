import math

import numpy as np
import pytest

from sdim_logit.base import export_logits
from sdim_logit.data import LogitDataset
from sdim_logit.rejection import (CalibrationError, ThresholdTable, calibrate, decide, decide_batch,
                                  load_thresholds, nearest_rank, save_thresholds)


def sort_and_index(values, p):
    """Independent oracle: integer arithmetic on p expressed in hundredths."""
    s = sorted(values)
    hundredths = round(p * 100)
    rank = -(-hundredths * len(s) // 10000)
    return s[max(rank, 1) - 1]


def test_nearest_rank_matches_oracles():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 400))
        values = rng.normal(size=n).tolist()
        p = float(rng.choice([1.0, 2.0, 5.0, 50.0, 100.0, round(float(rng.uniform(0.01, 100)), 2)]))
        got = nearest_rank(values, p)
        assert got == sort_and_index(values, p)
        assert got == np.percentile(values, p, method="inverted_cdf")


def test_nearest_rank_n200():
    values = np.random.default_rng(1).permutation(np.arange(200.0))
    assert nearest_rank(values, 1.0) == 1.0  # the 2nd smallest


def test_nearest_rank_single_value():
    for p in (0.01, 1.0, 37.5, 100.0):
        assert nearest_rank([4.2], p) == 4.2


def test_nearest_rank_monotone_in_p():
    v = np.random.default_rng(2).normal(size=300)
    assert nearest_rank(v, 2.0) >= nearest_rank(v, 1.0)


@pytest.mark.parametrize("p", [0.0, -1.0, 100.5])
def test_nearest_rank_bad_percentile(p):
    with pytest.raises(ValueError):
        nearest_rank([1.0, 2.0], p)


def _table(value, c=3, p=1.0):
    return ThresholdTable(np.full(c, value), p, (1,) * c)


def test_vacuous_thresholds(small_models):
    head = small_models[1]
    f = np.random.default_rng(0).normal(0, 3, size=(50, 3))
    assert np.all(decide_batch(head, _table(-math.inf), f)[2])
    assert not np.any(decide_batch(head, _table(math.inf), f)[2])


def test_score_equal_to_threshold_is_accepted(small_models):
    head = small_models[1]
    f = np.array([0.3, -1.0, 2.0])
    first = decide(head, _table(-math.inf), f)
    table = ThresholdTable(np.full(3, first.score), 1.0, (1, 1, 1))
    d = decide(head, table, f)
    assert not d.rejected and d.label == first.label
    table = ThresholdTable(np.full(3, np.nextafter(first.score, math.inf)), 1.0, (1, 1, 1))
    assert decide(head, table, f).rejected


def test_decide_shape_check(small_models):
    with pytest.raises(ValueError):
        decide(small_models[1], _table(0.0), np.zeros(4))


def test_calibration_band_and_monotone(small_models):
    base, head, train, _ = small_models
    ld = export_logits(base, train)
    tables = {p: calibrate(head, ld, p) for p in (1.0, 2.0)}
    pred, _, _ = decide_batch(head, tables[1.0], ld.logits)
    for p, t in tables.items():
        _, _, acc = decide_batch(head, t, ld.logits)
        for y in range(3):
            mask = (pred == ld.labels) & (ld.labels == y)
            frac = np.mean(~acc[mask])
            assert max(0, p - 1) / 100 <= frac <= (p + 1) / 100
    assert np.all(tables[2.0].thresholds >= tables[1.0].thresholds)


def test_calibration_without_correct_samples(small_models):
    head = small_models[1]
    logp_pred = head.predict(np.zeros((1, 3)))[0]
    wrong = (logp_pred + 1) % 3
    ld = LogitDataset([wrong] * 4 + [0, 1, 2], np.vstack([np.zeros((4, 3)), np.eye(3) * 5]), 3)
    absent = [y for y in range(3) if not np.any((head.predict(ld.logits) == ld.labels) & (ld.labels == y))]
    assert absent
    with pytest.raises(CalibrationError, match=f"class {absent[0]}"):
        calibrate(head, ld)


def test_calibration_needs_labels(small_models):
    with pytest.raises(CalibrationError):
        calibrate(small_models[1], LogitDataset([-1], [[0.0, 0.0, 0.0]], 3))


def test_threshold_file_round_trip(small_table, tmp_path):
    save_thresholds(small_table, tmp_path / "t.json")
    assert load_thresholds(tmp_path / "t.json") == small_table
