"""NT-Xent alignment training with per-strategy text handling."""

from __future__ import annotations

import configparser
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import aggregation as agg
from .aggregation import Strategy, StrategySpec
from .data import Corpus, split
from .evaluation import RetrievalEvaluator
from .model import CaptionAligner, Checkpoint, ModelDims
from .numerics import AdamW, Tensor, backward
from .numerics import ops as T

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainResult",
    "NumericError",
    "nt_xent",
    "train",
    "build_model",
    "model_from_checkpoint",
    "read_config_file",
]

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """A loss or parameter became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 1e-4
    temperature: float = 0.5
    batch_size: int = 200
    max_epochs: int = 1000
    patience: int = 5
    strategy: str = "wfa_uniqueness"
    seed: int = 0
    split_ratio: float = 0.9
    split_seed: int = 0
    symmetric: bool = True
    val_k: int = 5
    d: int = 32
    d_proj: int = 16
    heads: int = 4
    image_hidden: int = 64
    proj_hidden: int = 32

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        Strategy(self.strategy)

    @property
    def strategy_spec(self) -> StrategySpec:
        return StrategySpec.parse(self.strategy, self.seed)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], base: "TrainConfig | None" = None) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kind = types[key]
            if kind == "bool":
                kwargs[key] = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif kind == "int":
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw).strip()
        return replace(base or cls(), **kwargs)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file (``#`` comments allowed)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string("[config]\n" + Path(path).read_text(encoding="utf-8"))
    return dict(parser["config"])


@dataclass
class TrainReport:
    strategy: str
    seed: int
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    val_map: list[float] = field(default_factory=list)
    pairs_per_epoch: list[int] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0
    best_score: float = float("nan")
    best_checkpoint: str = ""

    def to_text(self) -> str:
        head = [
            f"strategy = {self.strategy}",
            f"seed = {self.seed}",
            f"stopping_epoch = {self.stopping_epoch}",
            f"best_epoch = {self.best_epoch}",
            f"best_val_bleu4@5 = {self.best_score!r}",
            f"best_checkpoint = {self.best_checkpoint}",
            "",
            f"{'epoch':>5}  {'pairs':>6}  {'train_loss':>20}  {'val_bleu4@5':>20}  {'val_map@5':>20}",
        ]
        for e in range(len(self.train_loss)):
            head.append(
                f"{e + 1:>5}  {self.pairs_per_epoch[e]:>6}  {self.train_loss[e]!r:>20}  "
                f"{self.val_metric[e]!r:>20}  {self.val_map[e]!r:>20}"
            )
        return "\n".join(head) + "\n"

    def to_csv(self) -> str:
        lines = ["epoch,pairs,train_loss,val_bleu4@5,val_map@5"]
        for e in range(len(self.train_loss)):
            lines.append(
                f"{e + 1},{self.pairs_per_epoch[e]},{self.train_loss[e]!r},{self.val_metric[e]!r},{self.val_map[e]!r}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    report: TrainReport
    checkpoint: Checkpoint
    model: CaptionAligner


def nt_xent(U: Tensor, V: Tensor, temperature: float, symmetric: bool = True) -> Tensor:
    """Normalized temperature-scaled cross entropy between paired rows.

    Row i of ``U`` is the positive for row i of ``V``; every other row of the
    batch is a negative. The symmetric form averages the U->V and V->U
    directions; otherwise only U->V is used.
    """
    if U.shape != V.shape or U.ndim != 2:
        raise T.ShapeError("nt_xent", U.shape, V.shape)
    B = U.shape[0]
    if B < 2:
        raise ValueError("nt_xent needs a batch of at least 2 pairs")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    S = T.scale(T.cosine_similarity_matrix(U, V), 1.0 / temperature)
    diag = (np.arange(B), np.arange(B))
    loss = T.scale(T.mean(T.log_softmax(S, axis=1)[diag]), -1.0)
    if symmetric:
        cols = T.scale(T.mean(T.log_softmax(S, axis=0)[diag]), -1.0)
        loss = T.scale(T.add(loss, cols), 0.5)
    return loss


def _weigher_kind(strategy: Strategy) -> str | None:
    return {Strategy.WFA_ATTENTION: "attention", Strategy.LGWF: "linear"}.get(strategy)


def build_model(config: TrainConfig, d_raw: int, d: int | None = None) -> CaptionAligner:
    dims = ModelDims(
        d_raw=d_raw,
        d=config.d if d is None else d,
        d_proj=config.d_proj,
        heads=config.heads,
        image_hidden=config.image_hidden,
        proj_hidden=config.proj_hidden,
    )
    return CaptionAligner(dims, _weigher_kind(Strategy(config.strategy)), config.seed)


def model_from_checkpoint(ckpt: Checkpoint) -> CaptionAligner:
    dims = ModelDims(**ckpt.extra["dims"])
    model = CaptionAligner(dims, _weigher_kind(Strategy(ckpt.extra["strategy"])), ckpt.seed)
    model.load_state_dict(ckpt.params)
    return model


class _Batcher:
    """Precomputed per-image tensors and the per-strategy batch builder."""

    def __init__(self, corpus: Corpus, spec: StrategySpec, uniqueness_cache: Mapping[str, np.ndarray] | None):
        self.spec = spec
        self.kind = spec.kind
        self.images = np.stack([r.image_feature for r in corpus])
        self.counts = np.array([r.num_captions for r in corpus], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(np.int64)
        self.captions = np.concatenate([r.text_features for r in corpus], axis=0)
        self.owner = np.repeat(np.arange(len(corpus)), self.counts)

        if self.kind is Strategy.CONCATENATION:
            if not corpus.has_concat:
                raise ValueError("concatenation strategy needs concatenated-caption features")
            self.concat = np.stack([r.concat_feature for r in corpus])
        if self.kind in (Strategy.MEAN_FEATURE, Strategy.WFA_UNIQUENESS):
            weights = []
            for r in corpus:
                if self.kind is Strategy.MEAN_FEATURE or r.num_captions < 2:
                    w = agg.uniform_weights(r.num_captions)
                elif uniqueness_cache is not None and r.image_id in uniqueness_cache:
                    w = np.asarray(uniqueness_cache[r.image_id], dtype=np.float64)
                    if len(w) != r.num_captions:
                        raise ValueError(f"{r.image_id}: cached weights do not match {r.num_captions} captions")
                else:
                    w = agg.uniqueness_weights(r.captions)
                weights.append(w)
            self.weights = np.concatenate(weights)

    def units(self) -> int:
        return int(self.counts.sum()) if self.kind is Strategy.REPLICATION else len(self.counts)

    def batch(self, model: CaptionAligner, units: np.ndarray, epoch: int) -> tuple[Tensor, Tensor]:
        """Return (text features, raw image features) for the batch units."""
        if self.kind is Strategy.REPLICATION:
            return Tensor(self.captions[units]), Tensor(self.images[self.owner[units]])

        images = Tensor(self.images[units])
        if self.kind is Strategy.CONCATENATION:
            return Tensor(self.concat[units]), images
        if self.kind is Strategy.RANDOM_SELECTION:
            rows = [
                self.offsets[i] + agg.random_select_index(int(self.counts[i]), self.spec.rng_seed, epoch, int(i))
                for i in units
            ]
            return Tensor(self.captions[rows]), images

        rows = np.concatenate([np.arange(self.offsets[i], self.offsets[i] + self.counts[i]) for i in units])
        segments = np.repeat(np.arange(len(units)), self.counts[units])
        feats = Tensor(self.captions[rows])
        if self.kind.learned:
            weights = agg.learned_weights(feats, model.weigher, segments)
        else:
            weights = Tensor(self.weights[rows])
        return agg.aggregate_segments(feats, weights, segments, len(units)), images


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    size = min(batch_size, n)
    out = [order[i : i + size] for i in range(0, n, size)]
    if out and len(out[-1]) < 2:
        out.pop()
    return out


def train(
    corpus: Corpus,
    config: TrainConfig,
    validation: Corpus | None = None,
    uniqueness_cache: Mapping[str, np.ndarray] | None = None,
    val_metric: Callable[[CaptionAligner, int], float] | None = None,
    checkpoint_name: str = "best.ckpt",
) -> TrainResult:
    """Train one strategy and keep the parameters of the best validation epoch.

    Without ``validation`` the corpus is split by ``config.split_ratio``.
    ``val_metric`` overrides the BLEU-4@K early-stopping score.
    """
    if len(corpus) == 0:
        raise ValueError("empty dataset")
    if validation is None:
        corpus, validation = split(corpus, config.split_ratio, config.split_seed)
        if len(corpus) == 0:
            raise ValueError("empty training split")
    spec = config.strategy_spec
    model = build_model(config, corpus.image_dim, corpus.text_dim)
    if model.dims.d != corpus.text_dim:
        raise T.ShapeError("train", (model.dims.d,), (corpus.text_dim,))
    batcher = _Batcher(corpus, spec, uniqueness_cache)
    if batcher.units() < 2:
        raise ValueError("training needs at least 2 pairs")
    params = OrderedDict(model.named_parameters())
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)

    evaluator = RetrievalEvaluator(validation) if len(validation) > 0 else None
    k = min(config.val_k, len(validation)) if len(validation) else 0

    def score(epoch: int) -> tuple[float, float]:
        if val_metric is not None:
            return float(val_metric(model, epoch)), float("nan")
        if evaluator is None or k < 1:
            return float("nan"), float("nan")
        m = evaluator.evaluate(model, ks=(k,))
        return m[f"bleu4@{k}"], m[f"map@{k}"]

    report = TrainReport(strategy=spec.kind.value, seed=config.seed, best_checkpoint=checkpoint_name)
    best_state = model.state_dict()
    best_opt = opt.state_blocks()
    best = -math.inf
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        losses, pairs = [], 0
        for units in _batches(batcher.units(), config.batch_size, rng):
            text, raw = batcher.batch(model, units, epoch)
            loss = nt_xent(
                model.project(text), model.project(model.encode_image(raw)), config.temperature, config.symmetric
            )
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(loss.item())
            pairs += len(units)
        metric, mean_ap = score(epoch)
        report.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        report.val_metric.append(metric)
        report.val_map.append(mean_ap)
        report.pairs_per_epoch.append(pairs)
        report.stopping_epoch = epoch
        log.info("epoch %d loss %.6f val %.6f", epoch, report.train_loss[-1], metric)

        if math.isnan(metric) or metric > best:
            best = metric if not math.isnan(metric) else best
            report.best_epoch = epoch
            best_state = model.state_dict()
            best_opt = opt.state_blocks()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    report.best_score = best if best > -math.inf else float("nan")
    model.load_state_dict(best_state)
    extra = {
        "strategy": spec.kind.value,
        "dims": asdict(model.dims),
        "config": asdict(config),
        "validation_ids": list(validation.ids),
    }
    ckpt = Checkpoint(
        params=model.state_dict(),
        optimizer=best_opt,
        epoch=report.best_epoch,
        best_score=report.best_score,
        seed=config.seed,
        extra=extra,
    )
    return TrainResult(report, ckpt, model)
