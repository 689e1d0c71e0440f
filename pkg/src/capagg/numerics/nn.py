"""Neural layers on top of :mod:`capagg.numerics.tensor`."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "Module",
    "Linear",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "TransformerEncoderLayer",
]


class Module:
    """Container that discovers parameters and submodules by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise T.ShapeError(f"load {name}", p.shape, value.shape)
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map ``x @ weight + bias`` with weight of shape (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Tensor(_uniform(rng, (in_features, out_features), in_features), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (out_features,), in_features), requires_grad=True)

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self._eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self._eps)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the rows of an (L, d) input.

    ``mask`` is an optional (L, L) boolean array; False entries are excluded
    from the softmax. ``independent=True`` treats every row as its own
    length-1 sequence, where each row attends only to itself and the
    attention probabilities are identically 1.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self._heads = num_heads

    def forward(self, x: Tensor, mask: np.ndarray | None = None, independent: bool = False) -> Tensor:
        if independent:
            return self.out(self.value(x))

        L, d = x.shape
        dh = d // self._heads
        q, k, v = self.query(x), self.key(x), self.value(x)
        heads = []
        for h in range(self._heads):
            cols = (slice(None), slice(h * dh, (h + 1) * dh))
            scores = T.scale(T.matmul(q[cols], T.transpose(k[cols])), 1.0 / np.sqrt(dh))
            if mask is not None:
                scores = T.add(scores, np.where(mask, 0.0, -np.inf))
            heads.append(T.matmul(T.softmax(scores, axis=-1), v[cols]))
        return self.out(T.concat(heads, axis=1))


class TransformerEncoderLayer(Module):
    """Pre-norm encoder block: residual attention, then residual feed-forward."""

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator, ff_mult: int = 4):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_mult * dim, rng)
        self.ff2 = Linear(ff_mult * dim, dim, rng)

    def forward(self, x: Tensor, mask: np.ndarray | None = None, independent: bool = False) -> Tensor:
        x = T.add(x, self.attn(self.norm1(x), mask=mask, independent=independent))
        return T.add(x, self.ff2(T.relu(self.ff1(self.norm2(x)))))
