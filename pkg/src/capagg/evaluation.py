"""Text-to-image retrieval, mAP@K, BLEU-4@K and the analytic FLOPS model."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import MISSING, dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from . import textproc
from .aggregation import Strategy, StrategySpec
from .numerics import Tensor

__all__ = [
    "RetrievalIndex",
    "build_index",
    "retrieve",
    "rank",
    "average_precision_at_k",
    "map_at_k",
    "bleu4_at_k",
    "RetrievalEvaluator",
    "CostModel",
    "flops_estimate",
    "flops_table",
    "reference_cost_model",
    "format_table",
    "REPORT_COLUMNS",
]


@dataclass(frozen=True)
class RetrievalIndex:
    ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.ids):
            raise ValueError(f"index needs one row per id: {len(self.ids)} ids, vectors {v.shape}")
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        object.__setattr__(self, "vectors", np.where(norms > 0, v / np.where(norms > 0, norms, 1.0), 0.0))
        # rank position of each id in ascending order, used to break score ties
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        tie = np.empty(len(self.ids), dtype=np.int64)
        tie[order] = np.arange(len(self.ids))
        object.__setattr__(self, "_tie", tie)

    def __len__(self) -> int:
        return len(self.ids)


def build_index(model, corpus) -> RetrievalIndex:
    raw = Tensor(np.stack([r.image_feature for r in corpus]))
    return RetrievalIndex(corpus.ids, model.project(model.encode_image(raw)).data)


def rank(queries: np.ndarray, index: RetrievalIndex, k: int) -> np.ndarray:
    """Row indices of the top-``k`` images for each query row, best first."""
    if k > len(index):
        raise ValueError(f"K={k} exceeds index size {len(index)}")
    if k < 1:
        raise ValueError("K must be positive")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    q = np.where(norms > 0, q / np.where(norms > 0, norms, 1.0), 0.0)
    # round so parallel vectors, whose cosines can differ in the last ulp, tie and fall back to id order
    scores = np.round(q @ index.vectors.T, 12)
    out = np.empty((q.shape[0], k), dtype=np.int64)
    for i, s in enumerate(scores):
        out[i] = np.lexsort((index._tie, -s))[:k]
    return out


def retrieve(query: np.ndarray, index: RetrievalIndex, k: int) -> list[str]:
    """Top-``k`` image ids by cosine similarity; ties go to the smaller id."""
    return [index.ids[i] for i in rank(query, index, k)[0]]


def average_precision_at_k(ranked: Sequence, relevant: set, k: int) -> float:
    if not relevant:
        raise ValueError("query without relevant items")
    hits, total = 0, 0.0
    for r, item in enumerate(ranked[:k], 1):
        if item in relevant:
            hits += 1
            total += hits / r
    return total / min(len(relevant), k)


def map_at_k(rankings: Sequence[Sequence], relevant: Sequence[set], k: int) -> float:
    """Mean AP@K over queries; ``relevant[q]`` is the set of relevant ids of query q."""
    if len(rankings) != len(relevant):
        raise ValueError("one relevant set per ranking required")
    if not rankings:
        raise ValueError("no queries")
    return float(np.mean([average_precision_at_k(r, rel, k) for r, rel in zip(rankings, relevant)]))


def bleu4_at_k(
    query: Sequence[str],
    retrieved: Sequence[str],
    captions: Mapping[str, Sequence[Sequence[str]]],
    k: int,
) -> float:
    """Mean BLEU-4 of the query tokens against each of the top-``k`` images' caption sets."""
    top = list(retrieved[:k])
    if len(top) < k:
        raise ValueError(f"only {len(top)} retrieved ids for K={k}")
    return float(np.mean([textproc.bleu4(query, captions[i]) for i in top]))


class RetrievalEvaluator:
    """Every caption of a corpus as a query against all of its images.

    BLEU values are memoized per (query, image) pair, so repeated evaluation
    during training only pays for pairs not seen before.
    """

    def __init__(self, corpus):
        self.corpus = corpus
        self.ids = corpus.ids
        self.tokens = [[textproc.tokenize(c) for c in r.captions] for r in corpus]
        self.query_owner = np.array([i for i, r in enumerate(corpus) for _ in r.captions], dtype=np.int64)
        self.query_tokens = [t for caps in self.tokens for t in caps]
        self.query_features = np.concatenate([r.text_features for r in corpus], axis=0)
        self._bleu: dict[tuple[int, int], float] = {}

    def _bleu_pair(self, q: int, img: int) -> float:
        key = (q, img)
        val = self._bleu.get(key)
        if val is None:
            val = textproc.bleu4(self.query_tokens[q], self.tokens[img])
            self._bleu[key] = val
        return val

    def evaluate(self, model, ks: Sequence[int] = (5, 20)) -> dict[str, float]:
        index = build_index(model, self.corpus)
        queries = model.project(Tensor(self.query_features)).data
        kmax = max(ks)
        ranked = rank(queries, index, kmax)
        out: dict[str, float] = {}
        for k in ks:
            ap = []
            bleu = []
            for q, row in enumerate(ranked[:, :k]):
                owner = self.query_owner[q]
                hit = np.nonzero(row == owner)[0]
                ap.append(1.0 / (hit[0] + 1) if hit.size else 0.0)
                bleu.append(float(np.mean([self._bleu_pair(q, int(i)) for i in row])))
            out[f"bleu4@{k}"] = float(np.mean(bleu))
            out[f"map@{k}"] = float(np.mean(ap))
        return out


# ---------------------------------------------------------------------------
# FLOPS


def _linear_text_cost(per_token: float, base: float = 0.0) -> Callable[[float], float]:
    return lambda length: base + per_token * length


@dataclass
class CostModel:
    """Per-forward-pass costs, in the caller's unit (billions in the reference model)."""

    image: float
    text_per_token: float
    projection: float
    weigher: float
    num_captions: int
    avg_caption_length: float
    text_base: float = 0.0
    linear_weigher: float = 0.0
    text_cost: Callable[[float], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in (
            "image", "text_per_token", "projection", "weigher", "avg_caption_length", "text_base", "linear_weigher"
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"cost {name} must be non-negative")
        if self.num_captions < 1:
            raise ValueError("num_captions must be at least 1")
        if self.text_cost is None:
            self.text_cost = _linear_text_cost(self.text_per_token, self.text_base)

    def text(self, length: float | None = None) -> float:
        cost = self.text_cost(self.avg_caption_length if length is None else length)
        if cost < 0:
            raise ValueError("text cost must be non-negative")
        return cost

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "CostModel":
        known = {f.name for f in fields(cls)} - {"text_cost"}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown cost model keys: {sorted(unknown)}")
        required = {f.name for f in fields(cls) if f.default is MISSING}
        missing = required - set(values)
        if missing:
            raise ValueError(f"cost model is missing keys: {sorted(missing)}")
        kwargs = {k: float(v) for k, v in values.items()}
        if "num_captions" in kwargs:
            kwargs["num_captions"] = int(kwargs["num_captions"])
        return cls(**kwargs)


def flops_estimate(strategy: StrategySpec | Strategy | str, cost: CostModel) -> float:
    """Inference FLOPS for one image with ``cost.num_captions`` captions."""
    kind = strategy.kind if isinstance(strategy, StrategySpec) else Strategy(strategy)
    m = cost.num_captions
    img, txt, proj = cost.image, cost.text(), cost.projection
    if kind is Strategy.REPLICATION:
        return m * (img + txt + 2 * proj)
    if kind is Strategy.CONCATENATION:
        return img + cost.text(m * cost.avg_caption_length) + 2 * proj
    if kind is Strategy.RANDOM_SELECTION:
        return img + txt + 2 * proj
    mean = img + m * txt + 2 * proj
    if kind in (Strategy.MEAN_FEATURE, Strategy.WFA_UNIQUENESS):
        return mean
    if kind is Strategy.LGWF:
        return mean + cost.linear_weigher
    return mean + cost.weigher


def flops_table(cost: CostModel) -> dict[str, float]:
    return {s.value: flops_estimate(s, cost) for s in Strategy}


def reference_cost_model(avg_caption_length: float = 10.0) -> CostModel:
    """Linear cost model solved against reference per-strategy FLOPS (billions).

    Random selection (one image + one caption + two projections) costs 34.38,
    each extra caption of the mean strategy adds (35.80 - 34.38) / 4, and the
    attention weigher adds 36.47 - 35.80. Image and projection costs are not
    separable from those figures; the projection is set to zero. The linear
    weigher is one 768-wide dot product per caption.
    """
    per_caption = (35.80 - 34.38) / 4
    return CostModel(
        image=34.38 - per_caption,
        text_per_token=per_caption / avg_caption_length,
        projection=0.0,
        weigher=36.47 - 35.80,
        linear_weigher=5 * 2 * 768 / 1e9,
        num_captions=5,
        avg_caption_length=avg_caption_length,
    )


# ---------------------------------------------------------------------------
# report tables

REPORT_COLUMNS = ("strategy", "bleu4@5", "map@5", "bleu4@20", "map@20", "flops")


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.4f}"
    return str(value)


def format_table(rows: Sequence[Mapping[str, object]], columns: Sequence[str] = REPORT_COLUMNS) -> tuple[str, str]:
    """Render rows as (aligned text table, CSV)."""
    cells = [[str(c) for c in columns]] + [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in columns])
    return "\n".join(lines) + "\n", buf.getvalue()
