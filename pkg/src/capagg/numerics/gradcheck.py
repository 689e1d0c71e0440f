"""Central finite-difference check of autodiff gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Return the max relative error between autodiff and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values. The
    relative error of a coordinate is ``|a - n| / max(|a| + |n|, floor)``.
    """
    for p in params:
        p.grad = None
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]) + abs(num), floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
