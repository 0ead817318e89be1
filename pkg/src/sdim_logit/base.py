"""The frozen discriminative classifier whose logits feed the head."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import NO_LABEL, Dataset, LogitDataset
from .io import FORMAT_VERSION, FormatError, dump_json, load_json
from .layers import MLP, freeze, mlp_param_count, param_hash

HIDDEN = (64, 64)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class BaseTrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


@dataclass(eq=False)
class BaseModel:
    mlp: MLP
    n_classes: int
    input_dim: int
    frozen: bool = False
    summary: dict = field(default_factory=dict)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of shape (n, {self.input_dim}), got {x.shape}")
        return self.mlp(x)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def param_hash(self) -> str:
        return param_hash(self.parameters())

    def freeze(self) -> None:
        freeze(self.parameters())
        self.frozen = True

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "base",
            "n_classes": self.n_classes,
            "input_dim": self.input_dim,
            "layers": self.mlp.to_list(),
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> BaseModel:
        try:
            mlp = MLP.from_list(doc["layers"])
            model = cls(mlp, int(doc["n_classes"]), int(doc["input_dim"]),
                        summary=dict(doc.get("summary", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad base checkpoint: {exc}") from None
        if mlp.sizes[0] != model.input_dim or mlp.sizes[-1] != model.n_classes:
            raise FormatError(f"layer sizes {mlp.sizes} do not match input_dim/n_classes")
        model.freeze()
        return model


def base_param_count(input_dim: int, n_classes: int) -> int:
    return mlp_param_count([input_dim, *HIDDEN, n_classes])


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy via a max-shifted log-normaliser."""
    return ad.mean(ad.logsumexp(logits, axis=1) - ad.pick(logits, labels))


def logits(m: BaseModel, x) -> np.ndarray:
    """Base logits for one input vector ``(k,)`` or a batch ``(n, k)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.shape[-1] != m.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, model expects {m.input_dim}")
    out = m.forward(Tensor(np.atleast_2d(x))).data
    return out[0] if single else out


def predict(m: BaseModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(logits(m, x), axis=1)


def accuracy(m: BaseModel, d: Dataset) -> float:
    return float(np.mean(predict(m, d.inputs) == d.labels))


def train_base(
    train: Dataset,
    cfg: BaseTrainConfig | None = None,
    test: Dataset | None = None,
) -> BaseModel:
    """Fit the k -> 64 -> 64 -> C ELU MLP by Adam on cross-entropy, then freeze."""
    cfg = cfg or BaseTrainConfig()
    if train.provenance != "clean":
        raise ValueError(f"train_base needs clean data, got {train.provenance!r}")
    if train.n_classes < 2:
        raise ValueError("need at least 2 classes")
    if not train.labeled:
        raise ValueError("training data must be labeled")
    rng = np.random.default_rng([cfg.seed, 100])
    model = BaseModel(MLP([train.input_dim, *HIDDEN, train.n_classes], rng),
                      train.n_classes, train.input_dim)
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    n = len(train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            try:
                loss = cross_entropy(model.forward(Tensor(train.inputs[idx])), train.labels[idx])
                ad.backward(loss)
            except ad.NonFiniteError as exc:
                raise DivergenceError(str(exc), epoch) from None
            opt.step()
    model.freeze()
    model.summary = {"train_accuracy": accuracy(model, train), "config": asdict(cfg)}
    if test is not None:
        model.summary["test_accuracy"] = accuracy(model, test)
    return model


def export_logits(m: BaseModel, d: Dataset, seed: int | None = None) -> LogitDataset:
    if not m.frozen:
        raise ValueError("export_logits requires a frozen base model")
    if d.input_dim != m.input_dim:
        raise ValueError(f"dataset input_dim {d.input_dim} != model input_dim {m.input_dim}")
    labels = np.full(len(d), NO_LABEL) if d.is_ood else d.labels.copy()
    return LogitDataset(labels, logits(m, d.inputs), m.n_classes, f"base:{d.provenance}", seed)


def save_base(m: BaseModel, path: os.PathLike | str) -> None:
    dump_json(m.to_dict(), path)


def load_base(path: os.PathLike | str) -> BaseModel:
    try:
        return BaseModel.from_dict(load_json(path, kind="base"))
    except FormatError as exc:
        if exc.path is None:
            raise FormatError(str(exc), Path(path)) from None
        raise
