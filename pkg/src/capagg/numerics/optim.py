"""AdamW with decoupled weight decay."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["AdamW"]


@dataclass
class AdamW:
    """AdamW over a named parameter list.

    Decay shrinks each parameter by ``lr * weight_decay`` before the Adam
    update and never enters the moment estimates.
    """

    params: "OrderedDict[str, Tensor]"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step_count: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = OrderedDict(self.params)
        for name, p in self.params.items():
            self.exp_avg.setdefault(name, np.zeros_like(p.data))
            self.exp_avg_sq.setdefault(name, np.zeros_like(p.data))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """One update. Gradients default to each parameter's ``.grad`` (None counts as zero)."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = grads[name] if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.shape:
                raise ShapeError(f"adamw {name}", p.shape, g.shape)
            m = self.exp_avg[name]
            v = self.exp_avg_sq[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            data = p.data * (1.0 - self.lr * self.weight_decay)
            data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = data

    def state_blocks(self) -> "OrderedDict[str, np.ndarray]":
        blocks: OrderedDict[str, np.ndarray] = OrderedDict()
        blocks["adamw.step"] = np.asarray(float(self.step_count))
        for key in ("lr", "beta1", "beta2", "eps", "weight_decay"):
            blocks[f"adamw.{key}"] = np.asarray(float(getattr(self, key)))
        for name in self.params:
            blocks[f"adamw.exp_avg.{name}"] = self.exp_avg[name].copy()
            blocks[f"adamw.exp_avg_sq.{name}"] = self.exp_avg_sq[name].copy()
        return blocks

    def load_state_blocks(self, blocks: dict) -> None:
        self.step_count = int(blocks["adamw.step"])
        for key in ("lr", "beta1", "beta2", "eps", "weight_decay"):
            setattr(self, key, float(blocks[f"adamw.{key}"]))
        for name, p in self.params.items():
            for prefix, store in (("exp_avg", self.exp_avg), ("exp_avg_sq", self.exp_avg_sq)):
                value = np.asarray(blocks[f"adamw.{prefix}.{name}"], dtype=np.float64)
                if value.shape != p.shape:
                    raise ShapeError(f"adamw {prefix} {name}", p.shape, value.shape)
                store[name] = value.copy()
