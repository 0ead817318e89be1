import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdim_logit.data import (NO_LABEL, SEVERITY_SIGMA, Dataset, LogitDataset, cluster_means,
                             corrupt_gaussian, load_dataset, load_logit_dataset, make_clusters,
                             make_ood, save_dataset, save_logit_dataset)
from sdim_logit.io import FormatError, SchemaVersionError


def nearest_mean_accuracy(d: Dataset) -> float:
    dist = np.linalg.norm(d.inputs[:, None, :] - d.means[None, :, :], axis=2)
    return float(np.mean(np.argmin(dist, axis=1) == d.labels))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_generators_are_pure_functions_of_seed(seed):
    assert make_clusters(4, 5, 2, 0.02, seed) == make_clusters(4, 5, 2, 0.02, seed)
    d = make_clusters(3, 4, 2, 0.01, seed)
    assert corrupt_gaussian(d, 3, seed) == corrupt_gaussian(d, 3, seed)
    assert make_ood("uniform", 7, 2, seed) == make_ood("uniform", 7, 2, seed)


def test_nearest_mean_oracle():
    d = make_clusters(4, 500, 2, 0.03, seed=7)
    assert nearest_mean_accuracy(d) >= 0.99


def test_spread_to_zero_collapses_to_means():
    d = make_clusters(3, 10, 2, 1e-12, seed=1)
    np.testing.assert_allclose(d.inputs, d.means[d.labels], atol=1e-9)


def test_means_are_separated_and_in_range():
    spread = 0.02
    m = cluster_means(10, 2, spread, seed=4)
    assert m.min() >= 0.2 and m.max() <= 0.8
    dist = np.linalg.norm(m[:, None] - m[None, :], axis=2) + np.eye(10) * 1e9
    assert dist.min() >= 4 * spread


def test_train_and_test_share_means_but_not_samples():
    tr, te = make_clusters(3, 20, 2, 0.01, 0, "train"), make_clusters(3, 20, 2, 0.01, 0, "test")
    np.testing.assert_array_equal(tr.means, te.means)
    assert not np.array_equal(tr.inputs, te.inputs)


def test_unplaceable_means_raise():
    with pytest.raises(ValueError, match="resamples"):
        make_clusters(10, 5, 2, spread=0.5, seed=0)


@pytest.mark.parametrize("kwargs", [dict(n_classes=1), dict(per_class=0), dict(spread=0.0)])
def test_cluster_preconditions(kwargs):
    args = dict(n_classes=3, per_class=5, input_dim=2, spread=0.01, seed=0) | kwargs
    with pytest.raises(ValueError):
        make_clusters(**args)


def test_sigma_ladder_strictly_increasing():
    assert all(b > a for a, b in zip(SEVERITY_SIGMA, SEVERITY_SIGMA[1:]))


def test_corruption_clips_and_labels_provenance():
    d = make_clusters(4, 50, 2, 0.01, 0)
    for s in range(1, 6):
        c = corrupt_gaussian(d, s, 0)
        assert c.inputs.min() >= 0.0 and c.inputs.max() <= 1.0
        assert c.provenance == f"corrupted({s})"
        np.testing.assert_array_equal(c.labels, d.labels)


def test_corruption_preconditions():
    d = make_clusters(2, 5, 2, 0.01, 0)
    with pytest.raises(ValueError):
        corrupt_gaussian(d, 6, 0)
    with pytest.raises(ValueError):
        corrupt_gaussian(corrupt_gaussian(d, 1, 0), 2, 0)


def test_uniform_ood_in_unit_box_and_unlabeled():
    o = make_ood("uniform", 500, 3, seed=2)
    assert o.inputs.min() >= 0 and o.inputs.max() <= 1
    assert np.all(o.labels == NO_LABEL) and o.is_ood


def test_shifted_clusters_keep_distance():
    means = cluster_means(10, 2, 0.01, seed=0)
    o = make_ood("shifted_clusters", 100, 2, seed=0, in_means=means, min_distance=0.15)
    dist = np.linalg.norm(o.means[:, None] - means[None, :], axis=2)
    assert dist.min() >= 0.15
    assert make_ood("shifted_clusters", 100, 2, 0, in_means=means) == o


def test_shifted_clusters_need_means():
    with pytest.raises(ValueError, match="in_means"):
        make_ood("shifted_clusters", 10, 2, 0)


def test_unknown_ood_kind():
    with pytest.raises(ValueError):
        make_ood("svhn", 10, 2, 0)


# ---------------------------------------------------------------------------
# files


def test_logit_file_round_trip(tmp_path):
    ld = LogitDataset([0, 1, NO_LABEL], [[0.1, -2.5], [1e-300, 3.0], [np.pi, -0.0]], 2, "base:clean", 4)
    save_logit_dataset(ld, tmp_path / "l.csv")
    assert load_logit_dataset(tmp_path / "l.csv") == ld


def _write_logits(tmp_path, body, n_classes):
    save_logit_dataset(LogitDataset([0], [[0.0] * n_classes], n_classes), tmp_path / "l.csv")
    header = "label," + ",".join(f"logit_{i}" for i in range(n_classes))
    (tmp_path / "l.csv").write_text(header + "\n" + body)
    return tmp_path / "l.csv"


def test_missing_label_reports_line(tmp_path):
    path = _write_logits(tmp_path, "0,1.0,2.0\n,1.0,2.0\n", 2)
    with pytest.raises(FormatError) as exc:
        load_logit_dataset(path)
    assert exc.value.line == 3


def test_arity_error(tmp_path):
    row = "1," + ",".join(["0.5"] * 9) + "\n"
    path = _write_logits(tmp_path, row, 10)
    with pytest.raises(FormatError, match="expected 11 fields") as exc:
        load_logit_dataset(path)
    assert exc.value.line == 2


def test_non_finite_value_rejected(tmp_path):
    path = _write_logits(tmp_path, "0,nan,1.0\n", 2)
    with pytest.raises(FormatError, match="non-finite"):
        load_logit_dataset(path)


def test_label_out_of_range(tmp_path):
    path = _write_logits(tmp_path, "0,1,1\n2,1.0,1.0\n", 2)
    with pytest.raises(FormatError) as exc:
        load_logit_dataset(path)
    assert exc.value.line == 3


def test_schema_version_mismatch(tmp_path):
    ld = LogitDataset([0], [[1.0, 2.0]], 2)
    save_logit_dataset(ld, tmp_path / "l.csv")
    meta = tmp_path / "l.csv.meta.json"
    meta.write_text(meta.read_text().replace('"format_version": 1', '"format_version": 2'))
    with pytest.raises(SchemaVersionError):
        load_logit_dataset(tmp_path / "l.csv")


def test_dataset_file_round_trip(tmp_path):
    d = make_clusters(3, 4, 2, 0.01, 0)
    for ds in (d, corrupt_gaussian(d, 2, 0), make_ood("uniform", 5, 2, 0)):
        save_dataset(ds, tmp_path / "d.csv")
        assert load_dataset(tmp_path / "d.csv") == ds
