"""L-infinity gradient-sign attacks on the composed model (input -> base -> head)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .base import BaseModel, cross_entropy
from .data import Dataset
from .head import Head

TARGETS = ("base_ce", "head_conditional")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    step_size: float = 0.01
    iterations: int = 40
    target: str = "base_ce"
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")


def input_gradient(base: BaseModel, x: np.ndarray, y: np.ndarray, target: str = "base_ce",
                   head: Head | None = None) -> np.ndarray:
    """Gradient of the summed attack loss with respect to each input row."""
    xt = Tensor(x, requires_grad=True)
    scores = base.forward(xt)
    if target == "head_conditional":
        if head is None:
            raise ValueError("target 'head_conditional' needs a head")
        scores = head.gauss.log_probs(head.encoder(scores))
    elif target != "base_ce":
        raise ValueError(f"unknown attack target {target!r}")
    # summed (not mean) loss: each row's gradient is its own loss gradient
    loss = cross_entropy(scores, y) * float(len(y))
    ad.backward(loss)
    if head is not None:
        ad.zero_grad(head.parameters())
    return xt.grad


def _check_inputs(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.min(initial=0.0) < 0.0 or x.max(initial=0.0) > 1.0:
        raise ValueError("attack inputs must lie in [0, 1]")
    return x


def project_linf(xa: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    """Nearest point to ``xa`` in the epsilon ball around ``x0`` and in [0, 1]^k."""
    xa = np.clip(np.clip(xa, x0 - eps, x0 + eps), 0.0, 1.0)
    # x0 + eps can round up; nudge offenders back by one ulp so |xa - x0| <= eps exactly
    for _ in range(4):
        over = np.abs(xa - x0) > eps
        if not over.any():
            break
        xa[over] = np.nextafter(xa[over], x0[over])
    return xa


def pgd_linf(base: BaseModel, x, y_true, cfg: AttackConfig, head: Head | None = None) -> np.ndarray:
    """Projected sign-gradient ascent inside the epsilon ball and [0, 1]^k."""
    x0 = _check_inputs(x)
    y_true = np.atleast_1d(np.asarray(y_true, dtype=np.int64))
    eps = cfg.epsilon
    xa = x0.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        xa = project_linf(x0 + rng.uniform(-eps, eps, size=x0.shape), x0, eps)
    for it in range(cfg.iterations):
        try:
            g = input_gradient(base, xa, y_true, cfg.target, head)
        except ad.NonFiniteError as exc:
            raise ad.NonFiniteError(f"iteration {it}: {exc}") from None
        xa = project_linf(xa + cfg.step_size * np.sign(g), x0, eps)
    return xa


def fgsm(base: BaseModel, x, y_true, epsilon: float, target: str = "base_ce",
         head: Head | None = None) -> np.ndarray:
    if epsilon == 0:
        return _check_inputs(x).copy()
    cfg = AttackConfig(epsilon, step_size=epsilon, iterations=1, target=target)
    return pgd_linf(base, x, y_true, cfg, head)


def attack_dataset(base: BaseModel, d: Dataset, cfg: AttackConfig, head: Head | None = None) -> Dataset:
    if not d.labeled:
        raise ValueError("attacks need labeled inputs")
    xa = pgd_linf(base, d.inputs, d.labels, cfg, head)
    return Dataset(xa, d.labels.copy(), d.n_classes,
                   f"adversarial({cfg.target},{cfg.epsilon!r})", d.means)
