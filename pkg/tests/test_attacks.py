import numpy as np
import pytest

from sdim_logit.attacks import AttackConfig, attack_dataset, fgsm, pgd_linf
from sdim_logit.base import accuracy


def test_zero_budget_returns_input(small_models):
    base, head, _, test = small_models
    x, y = test.inputs[:20], test.labels[:20]
    np.testing.assert_array_equal(fgsm(base, x, y, 0.0), x)
    np.testing.assert_array_equal(pgd_linf(base, x, y, AttackConfig(0.0, iterations=7)), x)


@pytest.mark.parametrize("target", ["base_ce", "head_conditional"])
@pytest.mark.parametrize("eps", [0.01, 0.05, 0.2])
def test_budget_and_box(small_models, target, eps):
    base, head, _, test = small_models
    x = test.inputs
    xa = pgd_linf(base, x, test.labels, AttackConfig(eps, 0.03, 10, target, random_start=True), head)
    assert np.max(np.abs(xa - x)) <= eps
    assert xa.min() >= 0.0 and xa.max() <= 1.0


def test_fgsm_is_one_step_pgd(small_models):
    base, head, _, test = small_models
    x, y = test.inputs, test.labels
    one = pgd_linf(base, x, y, AttackConfig(0.04, step_size=0.04, iterations=1))
    np.testing.assert_array_equal(fgsm(base, x, y, 0.04), one)


def test_attack_lowers_accuracy(small_models):
    base, _, _, test = small_models
    adv = attack_dataset(base, test, AttackConfig(0.1))
    assert adv.provenance == "adversarial(base_ce,0.1)"
    assert accuracy(base, adv) < accuracy(base, test)


def test_head_target_needs_head(small_models):
    base, _, _, test = small_models
    with pytest.raises(ValueError):
        pgd_linf(base, test.inputs, test.labels, AttackConfig(0.1, target="head_conditional"))


def test_inputs_outside_box_rejected(small_models):
    with pytest.raises(ValueError):
        fgsm(small_models[0], np.array([[1.5, 0.2]]), [0], 0.1)


@pytest.mark.parametrize("kwargs", [dict(epsilon=-0.1), dict(epsilon=0.1, iterations=0),
                                    dict(epsilon=0.1, target="svm")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AttackConfig(**kwargs)


def test_attack_does_not_touch_parameters(small_models):
    base, head, _, test = small_models
    b0, h0 = base.param_hash(), [p.data.copy() for p in head.parameters()]
    pgd_linf(base, test.inputs, test.labels, AttackConfig(0.05, iterations=3, target="head_conditional"), head)
    assert base.param_hash() == b0
    assert all(np.array_equal(a, p.data) for a, p in zip(h0, head.parameters()))
    assert all(p.grad is None for p in head.parameters())
