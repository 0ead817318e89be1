"""Generative head on frozen logits.

The head has three parts:

* an encoder mapping a logit vector ``f`` (length C) to a representation
  ``r`` (length d), ``C -> 64 -> 64 -> d`` with ELU;
* a critic scoring (logit, representation) pairs, ``(C + d) -> 64 -> 1``,
  used inside the Jensen-Shannon mutual-information lower bound;
* one diagonal Gaussian per class over representations.

Training minimises ``alpha * J_MI + beta * J_NLL + gamma * J_LM`` over the
head parameters only; the base classifier is never touched.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .base import BaseModel, DivergenceError, export_logits
from .data import Dataset, LogitDataset
from .io import FORMAT_VERSION, FormatError, dump_json, load_json
from .layers import MLP, mlp_param_count

LOG_2PI = math.log(2.0 * math.pi)
LOG_VAR_MIN, LOG_VAR_MAX = -6.0, 6.0


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    margin: float = 10.0
    batch_size: int = 64
    epochs: int = 40
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not self.alpha + self.beta + self.gamma > 0:
            raise ValueError("at least one of alpha, beta, gamma must be positive")
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the MI bound needs negative pairs)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    j_mi: float
    j_nll: float
    j_lm: float
    total: float


class Encoder:
    def __init__(self, n_classes: int, rep_dim: int = 64, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        self.mlp = MLP([n_classes, hidden, hidden, rep_dim], rng or np.random.default_rng(0))

    @property
    def n_classes(self) -> int:
        return self.mlp.sizes[0]

    @property
    def rep_dim(self) -> int:
        return self.mlp.sizes[-1]

    def __call__(self, f: Tensor) -> Tensor:
        if f.ndim != 2 or f.shape[1] != self.n_classes:
            raise ValueError(f"encoder expects logits of shape (n, {self.n_classes}), got {f.shape}")
        return self.mlp(f)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()


class MINetwork:
    def __init__(self, n_classes: int, rep_dim: int = 64, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        self.mlp = MLP([n_classes + rep_dim, hidden, 1], rng or np.random.default_rng(0))

    def __call__(self, f: Tensor, r: Tensor) -> Tensor:
        """Score each row pair; returns shape ``(n,)``."""
        out = self.mlp(ad.concat([f, r], axis=1))
        return ad.reshape(out, (out.shape[0],))

    def pair_scores(self, f: Tensor, r: Tensor) -> Tensor:
        """All cross scores ``S[i, j] = T(f_i, r_j)``, shape ``(n, n)``.

        The first layer is linear, so its pre-activation splits into a logit
        part and a representation part that are summed pairwise.
        """
        n, c = f.shape
        first, rest = self.mlp.layers[0], self.mlp.layers[1:]
        h = first.n_out
        w_f = ad.take_rows(first.w, np.arange(c))
        w_r = ad.take_rows(first.w, np.arange(c, first.n_in))
        full = (n, n, h)
        from_f = ad.matmul(f, w_f) + ad.expand(ad.reshape(first.b, (1, h)), (n, h))
        pre = (ad.expand(ad.reshape(from_f, (n, 1, h)), full)
               + ad.expand(ad.reshape(ad.matmul(r, w_r), (1, n, h)), full))
        x = ad.reshape(pre, (n * n, h))
        for layer in rest:
            x = layer(ad.elu(x))
        return ad.reshape(x, (n, n))

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()


class GaussianClassEmbedding:
    """Per-class diagonal Gaussians; log-variances are clamped to [-6, 6]."""

    def __init__(self, n_classes: int, rep_dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.mu = Tensor(rng.normal(0.0, 1.0, size=(n_classes, rep_dim)), requires_grad=True)
        self.log_var = Tensor(np.zeros((n_classes, rep_dim)), requires_grad=True)

    @property
    def n_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def rep_dim(self) -> int:
        return self.mu.shape[1]

    def log_probs(self, r: Tensor) -> Tensor:
        """``log p(r_i | y)`` for every row i and class y, shape ``(n, C)``."""
        n, d = r.shape
        c = self.n_classes
        if d != self.rep_dim:
            raise ValueError(f"representation has length {d}, embedding expects {self.rep_dim}")
        lv = ad.clamp(self.log_var, LOG_VAR_MIN, LOG_VAR_MAX)
        full = (n, c, d)
        diff = ad.expand(ad.reshape(r, (n, 1, d)), full) - ad.expand(ad.reshape(self.mu, (1, c, d)), full)
        lv_full = ad.expand(ad.reshape(lv, (1, c, d)), full)
        quad = ad.square(diff) * ad.exp(-lv_full)
        return ad.sum((LOG_2PI + lv_full + quad) * -0.5, axis=2)

    def parameters(self) -> list[Tensor]:
        return [self.mu, self.log_var]


def encode(e: Encoder, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    out = e(Tensor(np.atleast_2d(f))).data
    return out[0] if single else out


def class_conditional_logprob(g: GaussianClassEmbedding, r, y: int) -> float:
    if not 0 <= y < g.n_classes:
        raise ValueError(f"class {y} out of range [0, {g.n_classes})")
    r = np.asarray(r, dtype=np.float64).reshape(1, -1)
    return float(g.log_probs(Tensor(r)).data[0, y])


def _check_batch(f: Tensor, r: Tensor) -> int:
    if f.ndim != 2 or r.ndim != 2 or f.shape[0] != r.shape[0]:
        raise ValueError(f"logit batch {f.shape} and representation batch {r.shape} do not pair up")
    return f.shape[0]


def jsd_mi_bound(t: MINetwork, logits_batch, reps_batch) -> Tensor:
    """Jensen-Shannon MI lower bound over one mini-batch.

    Positive pairs are ``(f_i, r_i)``; negatives are every ``(f_i, r_j)``
    with ``i != j``. Returns ``E_pos[-softplus(-T)] - E_neg[softplus(T)]``.
    """
    f, r = ad._lift(logits_batch), ad._lift(reps_batch)
    b = _check_batch(f, r)
    if b < 2:
        raise ValueError("the MI bound needs a batch of at least 2 (no negative pairs otherwise)")
    scores = t.pair_scores(f, r)
    eye = np.eye(b)
    pos = ad.sum(ad.softplus(-scores) * eye) * (-1.0 / b)
    neg = ad.sum(ad.softplus(scores) * (1.0 - eye)) * (1.0 / (b * (b - 1)))
    return pos - neg


def _check_labels(labels, n_classes: int, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"labels must be {n} class indices in [0, {n_classes})")
    return labels


def nll_from_logprobs(logp: Tensor, labels: np.ndarray) -> Tensor:
    return -ad.mean(ad.pick(logp, labels))


def margin_from_logprobs(logp: Tensor, labels: np.ndarray, margin: float) -> Tensor:
    n, c = logp.shape
    true = ad.expand(ad.reshape(ad.pick(logp, labels), (n, 1)), (n, c))
    hinge = ad.relu(margin - (true - logp))
    false_mask = np.ones((n, c))
    false_mask[np.arange(n), labels] = 0.0
    return ad.sum(ad.square(hinge * false_mask)) * (1.0 / (n * (c - 1)))


def loss_nll(g: GaussianClassEmbedding, reps_batch, labels) -> Tensor:
    """Mean negative true-class log-density."""
    r = ad._lift(reps_batch)
    labels = _check_labels(labels, g.n_classes, r.shape[0])
    return nll_from_logprobs(g.log_probs(r), labels)


def loss_margin(g: GaussianClassEmbedding, reps_batch, labels, margin: float) -> Tensor:
    """Squared hinge on true-minus-false class log-density gaps."""
    if not margin > 0:
        raise ValueError("margin must be positive")
    r = ad._lift(reps_batch)
    labels = _check_labels(labels, g.n_classes, r.shape[0])
    return margin_from_logprobs(g.log_probs(r), labels, margin)


def total_loss(cfg: LossConfig, j_mi: Tensor, j_nll: Tensor, j_lm: Tensor) -> tuple[Tensor, LossBreakdown]:
    for name, term in (("j_mi", j_mi), ("j_nll", j_nll), ("j_lm", j_lm)):
        if not np.isfinite(ad._lift(term).data).all():
            raise ad.NonFiniteError(f"loss term {name} is not finite")
    total = cfg.alpha * j_mi + cfg.beta * j_nll + cfg.gamma * j_lm
    return total, breakdown(cfg, float(ad._lift(j_mi).data), float(ad._lift(j_nll).data),
                            float(ad._lift(j_lm).data))


def breakdown(cfg: LossConfig, j_mi: float, j_nll: float, j_lm: float) -> LossBreakdown:
    return LossBreakdown(j_mi, j_nll, j_lm, cfg.alpha * j_mi + cfg.beta * j_nll + cfg.gamma * j_lm)


@dataclass(eq=False)
class Head:
    encoder: Encoder
    mi_net: MINetwork
    gauss: GaussianClassEmbedding
    loss_config: LossConfig = field(default_factory=LossConfig)
    trace: list[LossBreakdown] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.gauss.n_classes

    @property
    def rep_dim(self) -> int:
        return self.gauss.rep_dim

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.mi_net.parameters() + self.gauss.parameters()

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def log_probs(self, logits) -> np.ndarray:
        """Class-conditional log-likelihoods ``(n, C)`` of a logit batch."""
        f = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        return self.gauss.log_probs(self.encoder(Tensor(f))).data

    def predict(self, logits) -> np.ndarray:
        # np.argmax returns the lowest index among ties
        return np.argmax(self.log_probs(logits), axis=1)

    def losses(self, f: np.ndarray, labels: np.ndarray) -> tuple[Tensor, LossBreakdown]:
        cfg = self.loss_config
        ft = Tensor(f)
        r = self.encoder(ft)
        logp = self.gauss.log_probs(r)
        j_mi = -jsd_mi_bound(self.mi_net, ft, r)
        j_nll = nll_from_logprobs(logp, labels)
        j_lm = margin_from_logprobs(logp, labels, cfg.margin)
        return total_loss(cfg, j_mi, j_nll, j_lm)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "head",
            "n_classes": self.n_classes,
            "rep_dim": self.rep_dim,
            "encoder": {"layers": self.encoder.mlp.to_list()},
            "mi_net": {"layers": self.mi_net.mlp.to_list()},
            "gauss": {"mu": self.gauss.mu.data.tolist(), "log_var": self.gauss.log_var.data.tolist()},
            "loss_config": asdict(self.loss_config),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Head:
        try:
            enc = Encoder.__new__(Encoder)
            enc.mlp = MLP.from_list(doc["encoder"]["layers"])
            mi = MINetwork.__new__(MINetwork)
            mi.mlp = MLP.from_list(doc["mi_net"]["layers"])
            g = GaussianClassEmbedding.__new__(GaussianClassEmbedding)
            g.mu = Tensor(np.asarray(doc["gauss"]["mu"], dtype=np.float64), requires_grad=True)
            g.log_var = Tensor(np.asarray(doc["gauss"]["log_var"], dtype=np.float64), requires_grad=True)
            known = {f.name for f in fields(LossConfig)}
            cfg = LossConfig(**{k: v for k, v in doc["loss_config"].items() if k in known})
            c, d = int(doc["n_classes"]), int(doc["rep_dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad head checkpoint: {exc}") from None
        if (enc.mlp.sizes[0], enc.mlp.sizes[-1]) != (c, d) or g.mu.shape != (c, d) \
                or g.log_var.shape != (c, d) or mi.mlp.sizes[0] != c + d or mi.mlp.sizes[-1] != 1:
            raise FormatError("head checkpoint shapes are inconsistent with n_classes/rep_dim")
        return cls(enc, mi, g, cfg)


def head_param_count(n_classes: int, rep_dim: int = 64, hidden: int = 64) -> int:
    """Analytic parameter count of the head architecture."""
    return (
        mlp_param_count([n_classes, hidden, hidden, rep_dim])
        + mlp_param_count([n_classes + rep_dim, hidden, 1])
        + 2 * n_classes * rep_dim
    )


def init_head(n_classes: int, cfg: LossConfig, rep_dim: int = 64, hidden: int = 64) -> Head:
    rng = np.random.default_rng([cfg.seed, 200])
    return Head(
        Encoder(n_classes, rep_dim, hidden, rng),
        MINetwork(n_classes, rep_dim, hidden, rng),
        GaussianClassEmbedding(n_classes, rep_dim, rng),
        cfg,
    )


def train_head(
    source: LogitDataset | tuple[BaseModel, Dataset],
    cfg: LossConfig | None = None,
    rep_dim: int = 64,
    hidden: int = 64,
) -> Head:
    """Fit a head on frozen logits; ``head.trace`` holds per-epoch mean losses.

    ``source`` is either a labeled :class:`LogitDataset` or a
    ``(base_model, dataset)`` pair whose logits are computed once up front.
    """
    cfg = cfg or LossConfig()
    if isinstance(source, tuple):
        base, data = source
        source = export_logits(base, data)
    if not source.labeled:
        raise ValueError("head training needs labeled logits")
    if np.unique(source.labels).size < 2:
        raise ValueError("head training needs at least 2 classes present")
    head = init_head(source.n_classes, cfg, rep_dim, hidden)
    params = head.parameters()
    opt = ad.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 201])
    n = len(source)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            opt.zero_grad()
            try:
                loss, parts = head.losses(source.logits[idx], source.labels[idx])
                ad.backward(loss)
            except ad.NonFiniteError as exc:
                raise DivergenceError(str(exc), epoch) from None
            opt.step()
            sums += (parts.j_mi, parts.j_nll, parts.j_lm)
            batches += 1
        head.trace.append(breakdown(cfg, *(sums / batches)))
    return head


def save_head(head: Head, path: os.PathLike | str) -> None:
    dump_json(head.to_dict(), path)


def load_head(path: os.PathLike | str) -> Head:
    try:
        return Head.from_dict(load_json(path, kind="head"))
    except FormatError as exc:
        if exc.path is None:
            raise FormatError(str(exc), Path(path)) from None
        raise
