"""Caption-handling strategies and weighted feature aggregation.

Weights for the non-learned strategies are plain float64 arrays; the learned
weighers return :class:`~capagg.numerics.Tensor` so gradients flow back into
their parameters. Batched variants take every caption of a batch stacked in
one (C, d) matrix plus a ``segments`` array mapping each row to its image.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import textproc
from .numerics import Tensor
from .numerics import ops as T

__all__ = [
    "Strategy",
    "StrategySpec",
    "aggregate_weighted",
    "aggregate_segments",
    "uniform_weights",
    "uniqueness_weights",
    "attention_weights",
    "lgwf_weights",
    "learned_weights",
    "expand_replication",
    "concatenate_captions",
    "random_select",
    "random_select_index",
    "write_weight_sidecar",
    "read_weight_sidecar",
]


class Strategy(str, enum.Enum):
    REPLICATION = "replication"
    CONCATENATION = "concatenation"
    RANDOM_SELECTION = "random_selection"
    MEAN_FEATURE = "mean_feature"
    WFA_UNIQUENESS = "wfa_uniqueness"
    WFA_ATTENTION = "wfa_attention"
    LGWF = "lgwf"

    @property
    def learned(self) -> bool:
        return self in (Strategy.WFA_ATTENTION, Strategy.LGWF)


@dataclass(frozen=True)
class StrategySpec:
    kind: Strategy
    rng_seed: int | None = None
    separator: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy(self.kind))
        if self.kind is Strategy.RANDOM_SELECTION:
            if self.rng_seed is None:
                object.__setattr__(self, "rng_seed", 0)
        elif self.rng_seed is not None:
            raise ValueError(f"rng_seed only applies to random_selection, not {self.kind.value}")
        if self.kind is Strategy.CONCATENATION:
            if self.separator is None:
                object.__setattr__(self, "separator", " ")
        elif self.separator is not None:
            raise ValueError(f"separator only applies to concatenation, not {self.kind.value}")

    @classmethod
    def parse(cls, name: str, seed: int = 0) -> "StrategySpec":
        kind = Strategy(name)
        if kind is Strategy.RANDOM_SELECTION:
            return cls(kind, rng_seed=seed)
        return cls(kind)


def _stack(features) -> Tensor:
    if isinstance(features, Tensor):
        return features
    if isinstance(features, np.ndarray):
        return Tensor(features)
    rows = [f if isinstance(f, Tensor) else Tensor(f) for f in features]
    d = rows[0].shape[-1]
    for r in rows:
        if r.shape != (d,):
            raise T.ShapeError("stack features", rows[0].shape, r.shape)
    return T.concat([T.reshape(r, (1, d)) for r in rows], axis=0)


def aggregate_weighted(features, weights) -> Tensor:
    """Convex combination ``sum_j weights[j] * features[j]``.

    ``features`` is an (M, d) array/Tensor or a list of M length-d vectors.
    """
    F = _stack(features)
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    if w.ndim != 1 or w.shape[0] != F.shape[0]:
        raise T.ShapeError("aggregate_weighted", F.shape, w.shape)
    return T.reshape(T.matmul(T.reshape(w, (1, w.shape[0])), F), (F.shape[1],))


def aggregate_segments(features: Tensor, weights, segments: np.ndarray, num_segments: int) -> Tensor:
    """Per-image weighted sums: (C, d) features -> (num_segments, d)."""
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    if w.shape != (features.shape[0],):
        raise T.ShapeError("aggregate_segments", features.shape, w.shape)
    return T.matmul(T.segment_matrix(w, segments, num_segments), features)


def uniform_weights(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("need at least one caption")
    return np.full(m, 1.0 / m)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def uniqueness_weights(captions: Sequence) -> np.ndarray:
    """Softmax of the per-caption uniqueness scores (no temperature).

    Accepts raw strings or pre-tokenized captions. Since every score lies in
    [0, 1], weights never differ by more than a factor of e.
    """
    if len(captions) < 2:
        raise ValueError(f"uniqueness weights need at least 2 captions, got {len(captions)}")
    toks = [textproc.tokenize(c) if isinstance(c, str) else list(c) for c in captions]
    return _softmax(np.array(textproc.uniqueness_scores(toks)))


def learned_weights(features: Tensor, weigher, segments: np.ndarray | None = None) -> Tensor:
    """Pseudo-weights from ``weigher`` per caption, softmax-normalized per image."""
    F = _stack(features)
    if segments is None:
        segments = np.zeros(F.shape[0], dtype=np.int64)
    # score each distinct row once so identical captions get bitwise-equal pseudo-weights
    # (BLAS may round the same row differently depending on its position)
    _, first, inverse = np.unique(F.data, axis=0, return_index=True, return_inverse=True)
    if len(first) == F.shape[0]:
        pseudo = weigher(F)
    else:
        pseudo = weigher(F[np.sort(first)])
        order = np.argsort(np.argsort(first))
        pseudo = pseudo[order[inverse.reshape(-1)]]
    return T.segment_softmax(pseudo, segments)


def _check_dim(features: Tensor, weigher, name: str) -> None:
    d = weigher.fc.weight.shape[0] if hasattr(weigher, "fc") else None
    if d is not None and features.shape[-1] != d:
        raise T.ShapeError(name, features.shape, (d,))


def attention_weights(features, weigher, segments: np.ndarray | None = None) -> Tensor:
    F = _stack(features)
    _check_dim(F, weigher, "attention_weights")
    return learned_weights(F, weigher, segments)


def lgwf_weights(features, lgwf, segments: np.ndarray | None = None) -> Tensor:
    F = _stack(features)
    _check_dim(F, lgwf, "lgwf_weights")
    return learned_weights(F, lgwf, segments)


def expand_replication(image_id: str, captions: Sequence[str]) -> list[tuple[str, str]]:
    return [(image_id, c) for c in captions]


def concatenate_captions(captions: Sequence[str], separator: str = " ") -> str:
    return separator.join(captions)


def random_select_index(m: int, rng_seed: int, epoch: int, image_index: int) -> int:
    """Uniform index in ``range(m)`` from a Philox stream keyed on (seed, epoch, image)."""
    if m < 1:
        raise ValueError("need at least one caption")
    bitgen = np.random.Philox(key=np.uint64(rng_seed & 0xFFFFFFFFFFFFFFFF), counter=[epoch, image_index, 0, 0])
    return int(np.random.Generator(bitgen).integers(m))


def random_select(captions: Sequence, rng_seed: int, epoch: int, image_index: int):
    return captions[random_select_index(len(captions), rng_seed, epoch, image_index)]


# ---------------------------------------------------------------------------
# offline uniqueness cache: "id \t M \t w1 w2 ... wM" per line, shortest
# round-trip float repr so cached weights reload bit-for-bit


def write_weight_sidecar(path: str | Path, rows: Iterable[tuple[str, np.ndarray]]) -> None:
    lines = []
    for image_id, w in rows:
        w = np.asarray(w, dtype=np.float64)
        lines.append(f"{image_id}\t{len(w)}\t" + " ".join(repr(float(x)) for x in w))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_weight_sidecar(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            image_id, m, values = line.split("\t")
            w = np.array([float(x) for x in values.split()])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed weight record") from exc
        if len(w) != int(m):
            raise ValueError(f"{path}:{lineno}: {image_id} declares {m} weights, found {len(w)}")
        out[image_id] = w
    return out
