"""Dense layers and ELU multilayer perceptrons on top of :mod:`autodiff`."""
from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.w = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    @property
    def n_in(self) -> int:
        return self.w.shape[0]

    @property
    def n_out(self) -> int:
        return self.w.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        bias = ad.expand(ad.reshape(self.b, (1, self.n_out)), (x.shape[0], self.n_out))
        return ad.matmul(x, self.w) + bias

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]

    def to_dict(self) -> dict:
        return {"w": self.w.data.tolist(), "b": self.b.data.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Dense:
        layer = cls.__new__(cls)
        w = np.asarray(d["w"], dtype=np.float64)
        b = np.asarray(d["b"], dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ValueError(f"layer shapes inconsistent: w {w.shape}, b {b.shape}")
        layer.w = Tensor(w, requires_grad=True)
        layer.b = Tensor(b, requires_grad=True)
        return layer


class MLP:
    """Stack of dense layers with ELU between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.elu(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def to_list(self) -> list[dict]:
        return [layer.to_dict() for layer in self.layers]

    @classmethod
    def from_list(cls, layers: list[dict]) -> MLP:
        mlp = cls.__new__(cls)
        mlp.layers = [Dense.from_dict(d) for d in layers]
        for a, b in zip(mlp.layers[:-1], mlp.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")
        return mlp


def mlp_param_count(sizes: Sequence[int]) -> int:
    return int(sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])))


def param_hash(params: Sequence[Tensor]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(str(p.shape).encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def freeze(params: Sequence[Tensor]) -> None:
    for p in params:
        p.requires_grad = False
        p.grad = None
        p.data.flags.writeable = False
