"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a closure mapping the upstream
gradient to one gradient per parent. ``Tensor.backward`` walks the graph in
reverse topological order, visiting each node once.

Broadcasting is deliberately limited to adding a 1-D bias along the last
axis and to scalar constants; anything else must have matching shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "relu",
    "tanh",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "layer_norm",
    "mean",
    "sum",
    "l2_normalize",
    "cosine_similarity_matrix",
    "transpose",
    "reshape",
    "segment_softmax",
    "segment_matrix",
    "backward",
]

DTYPE = np.float64


class ShapeError(ValueError):
    """Operands with incompatible shapes."""

    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")
        self.shapes = (a, b)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar constant")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Iterable[Tensor], fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data
    return _node(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return _node(a.data + float(b), (a,), lambda g: (g,))
    b = _as_tensor(b)
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.ndim - 1))
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise ShapeError("add", a.shape, b.shape)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, scale(b, -1.0))
    return add(a, -np.asarray(b, dtype=DTYPE))


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    A, B = a.data, b.data
    return _node(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ts[0].shape)) if i != ax
        ):
            raise ShapeError("concat", ts[0].shape, t.shape)
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _node(
        np.concatenate([t.data for t in ts], axis=ax),
        ts,
        lambda g: tuple(np.split(g, sizes, axis=ax)),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def fn(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(y, (a,), fn)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", a.shape, gain.shape)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gain.data
    axes = tuple(range(x.ndim - 1))

    def fn(g):
        gx = g * G
        dx = inv * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(xhat * G + bias.data, (a, gain, bias), fn)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    x = a.data
    if axis is None:
        n = x.size
        return _node(np.asarray(x.mean()), (a,), lambda g: (np.full_like(x, float(g) / n),))
    n = x.shape[axis]
    return _node(
        x.mean(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),),
    )


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = a.data
    if axis is None:
        return _node(np.asarray(x.sum()), (a,), lambda g: (np.full_like(x, float(g)),))
    return _node(
        x.sum(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),),
    )


def l2_normalize(a: Tensor, axis: int = -1, return_flag: bool = False):
    """Scale slices along ``axis`` to unit Euclidean norm.

    Zero slices map to zero. With ``return_flag=True`` a boolean mask of the
    zero slices is returned alongside the result.
    """
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    safe = np.where(zero, 1.0, norm)
    y = np.where(zero, 0.0, x / safe)

    def fn(g):
        dx = (g - y * (g * y).sum(axis=axis, keepdims=True)) / safe
        return (np.where(zero, 0.0, dx),)

    out = _node(y, (a,), fn)
    if return_flag:
        return out, np.squeeze(zero, axis=axis)
    return out


def cosine_similarity_matrix(A: Tensor, B: Tensor) -> Tensor:
    """Pairwise cosine similarities between the rows of ``A`` and ``B``."""
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError("cosine_similarity_matrix", A.shape, B.shape)
    return matmul(l2_normalize(A, axis=1), transpose(l2_normalize(B, axis=1)))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape, ())
    return _node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _getitem(a: Tensor, index) -> Tensor:
    x = a.data

    def fn(g):
        out = np.zeros_like(x)
        np.add.at(out, index, g)
        return (out,)

    return _node(x[index], (a,), fn)


def segment_softmax(a: Tensor, segments: np.ndarray) -> Tensor:
    """Softmax of a 1-D tensor taken separately within each segment id."""
    x = a.data
    seg = np.asarray(segments)
    if x.ndim != 1 or seg.shape != x.shape:
        raise ShapeError("segment_softmax", a.shape, seg.shape)
    n = int(seg.max()) + 1 if seg.size else 0
    top = np.full(n, -np.inf)
    np.maximum.at(top, seg, x)
    z = np.exp(x - top[seg])
    total = np.zeros(n)
    np.add.at(total, seg, z)
    y = z / total[seg]

    def fn(g):
        dot = np.zeros(n)
        np.add.at(dot, seg, g * y)
        return (y * (g - dot[seg]),)

    return _node(y, (a,), fn)


def segment_matrix(w: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """(num_segments, len(w)) matrix holding ``w[c]`` at row ``segments[c]``, zero elsewhere."""
    seg = np.asarray(segments)
    if w.ndim != 1 or seg.shape != w.shape:
        raise ShapeError("segment_matrix", w.shape, seg.shape)
    cols = np.arange(w.shape[0])
    out = np.zeros((num_segments, w.shape[0]))
    out[seg, cols] = w.data
    return _node(out, (w,), lambda g: (g[seg, cols],))
