"""Trainable components and the binary checkpoint format.

Text features are frozen inputs; only the image MLP, the shared projection
head and (for the learned strategies) a caption weigher carry parameters.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Linear, Module, Tensor, TransformerEncoderLayer
from .numerics import ops as T

__all__ = [
    "ImageEncoderMLP",
    "ProjectionHead",
    "AttentionWeigher",
    "LinearWeigher",
    "CaptionAligner",
    "ModelDims",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


class ImageEncoderMLP(Module):
    """affine -> relu -> affine from raw image features to the text dimension."""

    def __init__(self, d_raw: int, d: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or d_raw
        self.fc1 = Linear(d_raw, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class ProjectionHead(Module):
    """One-hidden-layer MLP applied to both image and text features."""

    def __init__(self, d: int, d_proj: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or d
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d_proj, rng)

    def forward(self, h: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(h)))


class AttentionWeigher(Module):
    """Two pre-norm encoder layers, a scalar FC layer and tanh.

    Each caption feature is its own length-1 sequence, so captions never
    attend to each other and any number of captions can be scored.
    """

    def __init__(self, d: int, rng: np.random.Generator, num_heads: int = 4, num_layers: int = 2):
        self.layers = [TransformerEncoderLayer(d, num_heads, rng) for _ in range(num_layers)]
        self.fc = Linear(d, 1, rng)

    def forward(self, features: Tensor) -> Tensor:
        """(C, d) caption features -> (C,) pseudo-weights."""
        x = features
        for layer in self.layers:
            x = layer(x, independent=True)
        return T.reshape(T.tanh(self.fc(x)), (features.shape[0],))


class LinearWeigher(Module):
    """Single affine map from a caption feature to a scalar pseudo-weight."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.fc = Linear(d, 1, rng)

    def forward(self, features: Tensor) -> Tensor:
        return T.reshape(self.fc(features), (features.shape[0],))


@dataclass(frozen=True)
class ModelDims:
    d_raw: int = 64
    d: int = 32
    d_proj: int = 16
    heads: int = 4
    image_hidden: int = 64
    proj_hidden: int = 32


class CaptionAligner(Module):
    """Image MLP + shared projection head + optional caption weigher."""

    def __init__(self, dims: ModelDims, weigher: str | None, seed: int):
        rng = np.random.default_rng(seed)
        self.dims = dims
        self.image_encoder = ImageEncoderMLP(dims.d_raw, dims.d, rng, dims.image_hidden)
        self.projection = ProjectionHead(dims.d, dims.d_proj, rng, dims.proj_hidden)
        if weigher == "attention":
            self.weigher = AttentionWeigher(dims.d, rng, dims.heads)
        elif weigher == "linear":
            self.weigher = LinearWeigher(dims.d, rng)
        elif weigher is None:
            self.weigher = None
        else:
            raise ValueError(f"unknown weigher {weigher!r}")

    def encode_image(self, raw: Tensor) -> Tensor:
        if raw.shape[-1] != self.dims.d_raw:
            raise T.ShapeError("encode_image", raw.shape, (self.dims.d_raw,))
        return self.image_encoder(raw)

    def project(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.dims.d:
            raise T.ShapeError("project", h.shape, (self.dims.d,))
        return self.projection(h)


# ---------------------------------------------------------------------------
# checkpoint file
#
#   b"CAGG" | u32 version
#   u32 n_params, n_params x block
#   u32 n_optim,  n_optim  x block
#   metadata: u32 epoch | f64 best_score | u64 seed | u32 n | n bytes UTF-8 JSON
#
#   block: u16 name_len | name | u8 rank | rank x u32 dim | f64 LE payload

MAGIC = b"CAGG"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: "OrderedDict[str, np.ndarray]"
    optimizer: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    epoch: int = 0
    best_score: float = float("nan")
    seed: int = 0
    extra: dict = field(default_factory=dict)


def _write_block(buf: bytearray, name: str, value: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.asarray(value, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    buf += struct.pack("<H", len(raw)) + raw
    buf += struct.pack("<B", arr.ndim)
    buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
    buf += arr.tobytes()


def _read_blocks(data: memoryview, pos: int) -> tuple["OrderedDict[str, np.ndarray]", int]:
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = bytes(data[pos : pos + n]).decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * size > len(data):
            raise CheckpointError(f"truncated payload for block {name!r}")
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return out, pos


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", VERSION)
    for blocks in (ckpt.params, ckpt.optimizer):
        buf += struct.pack("<I", len(blocks))
        for name, value in blocks.items():
            _write_block(buf, name, value)
    meta = json.dumps(ckpt.extra, sort_keys=True).encode("utf-8")
    buf += struct.pack("<IdQI", ckpt.epoch, ckpt.best_score, ckpt.seed, len(meta))
    buf += meta
    return bytes(buf)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = memoryview(Path(path).read_bytes())
    if bytes(data[:4]) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        params, pos = _read_blocks(data, 8)
        optimizer, pos = _read_blocks(data, pos)
        epoch, best, seed, n = struct.unpack_from("<IdQI", data, pos)
        pos += struct.calcsize("<IdQI")
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated metadata")
        extra = json.loads(bytes(data[pos : pos + n]).decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return Checkpoint(params, optimizer, epoch, best, seed, extra)
