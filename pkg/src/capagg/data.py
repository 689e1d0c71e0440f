"""Corpus ingestion, on-disk formats, splitting and the synthetic corpus.

Directory layout used by :func:`save_corpus_dir` / :func:`load_corpus_dir`::

    captions.tsv                      id \\t M \\t captions joined by 0x1F
    image_features.capf / .idx        one row per image
    text_features.capf  / .idx        one row per caption
    concat_features.capf / .idx       optional, one row per image

A ``.capf`` file is ``b"CAPF" | u32 version=1 | u32 rows | u32 dim`` followed
by float32 little-endian rows. Its ``.idx`` companion has one line per image:
``id \\t start_row \\t row_count``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import textproc
from .aggregation import concatenate_captions

__all__ = [
    "DataError",
    "CorpusRecord",
    "Corpus",
    "read_captions",
    "write_captions",
    "read_features",
    "write_features",
    "load_corpus",
    "load_corpus_dir",
    "save_corpus_dir",
    "split",
    "SynthSpec",
    "synth_generate",
    "hashed_text_features",
]

UNIT_SEP = "\x1f"
CAPF_MAGIC = b"CAPF"
CAPF_VERSION = 1

CAPTIONS_FILE = "captions.tsv"
IMAGE_FEATURES = "image_features.capf"
TEXT_FEATURES = "text_features.capf"
CONCAT_FEATURES = "concat_features.capf"


class DataError(ValueError):
    """Malformed or inconsistent corpus input."""


@dataclass(frozen=True)
class CorpusRecord:
    image_id: str
    captions: tuple[str, ...]
    image_feature: np.ndarray
    text_features: np.ndarray
    concat_feature: np.ndarray | None = None

    @property
    def num_captions(self) -> int:
        return len(self.captions)


@dataclass(frozen=True)
class Corpus:
    records: tuple[CorpusRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            return
        d_raw = self.records[0].image_feature.shape
        d_txt = self.records[0].text_features.shape[1:]
        has_concat = self.records[0].concat_feature is not None
        seen = set()
        for i, r in enumerate(self.records):
            if r.image_id in seen:
                raise DataError(f"record {i}: duplicate image id {r.image_id!r}")
            seen.add(r.image_id)
            if r.text_features.shape[0] != len(r.captions):
                raise DataError(
                    f"record {i} ({r.image_id}): {len(r.captions)} captions but "
                    f"{r.text_features.shape[0]} text-feature rows"
                )
            if r.image_feature.shape != d_raw or r.text_features.shape[1:] != d_txt:
                raise DataError(f"record {i} ({r.image_id}): feature dimension differs from record 0")
            if (r.concat_feature is not None) != has_concat:
                raise DataError(f"record {i} ({r.image_id}): concatenation feature present for only some records")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    @property
    def image_dim(self) -> int:
        return self.records[0].image_feature.shape[0]

    @property
    def text_dim(self) -> int:
        return self.records[0].text_features.shape[1]

    @property
    def has_concat(self) -> bool:
        return bool(self.records) and self.records[0].concat_feature is not None

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus(tuple(self.records[i] for i in indices))


# ---------------------------------------------------------------------------
# captions file


def write_captions(path: str | Path, rows: Sequence[tuple[str, Sequence[str]]]) -> None:
    out = []
    for image_id, caps in rows:
        for c in caps:
            if UNIT_SEP in c or "\n" in c or "\t" in c:
                raise DataError(f"{image_id}: caption contains a reserved separator character")
        out.append(f"{image_id}\t{len(caps)}\t{UNIT_SEP.join(caps)}\n")
    Path(path).write_text("".join(out), encoding="utf-8")


def read_captions(path: str | Path) -> list[tuple[str, tuple[str, ...]]]:
    rows = []
    text = Path(path).read_text(encoding="utf-8")
    for i, line in enumerate(text.split("\n")):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}: record {i}: expected 3 tab-separated fields, got {len(parts)}")
        image_id, m, joined = parts
        try:
            m = int(m)
        except ValueError:
            raise DataError(f"{path}: record {i} ({image_id}): caption count {m!r} is not an integer") from None
        caps = tuple(joined.split(UNIT_SEP)) if joined else ()
        if len(caps) != m:
            raise DataError(f"{path}: record {i} ({image_id}): declares {m} captions, found {len(caps)}")
        rows.append((image_id, caps))
    return rows


# ---------------------------------------------------------------------------
# feature files


def _index_path(path: Path) -> Path:
    return path.with_suffix(".idx")


def write_features(path: str | Path, blocks: Sequence[tuple[str, np.ndarray]]) -> None:
    """Write per-id 2-D float blocks to ``path`` and its ``.idx`` companion."""
    path = Path(path)
    mats = [np.atleast_2d(np.asarray(b)) for _, b in blocks]
    dim = mats[0].shape[1] if mats else 0
    for (image_id, _), m in zip(blocks, mats):
        if m.ndim != 2 or m.shape[1] != dim:
            raise DataError(f"{image_id}: feature block shape {m.shape} does not match dim {dim}")
    payload = np.concatenate(mats, axis=0).astype("<f4") if mats else np.zeros((0, 0), "<f4")
    header = CAPF_MAGIC + struct.pack("<III", CAPF_VERSION, payload.shape[0], dim)
    path.write_bytes(header + payload.tobytes())
    lines, start = [], 0
    for (image_id, _), m in zip(blocks, mats):
        lines.append(f"{image_id}\t{start}\t{m.shape[0]}\n")
        start += m.shape[0]
    _index_path(path).write_text("".join(lines), encoding="utf-8")


def read_features(path: str | Path) -> dict[str, np.ndarray]:
    """Read a ``.capf`` file into {id: float64 array of shape (rows, dim)}."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != CAPF_MAGIC:
        raise DataError(f"{path}: not a CAPF feature file")
    version, rows, dim = struct.unpack_from("<III", raw, 4)
    if version != CAPF_VERSION:
        raise DataError(f"{path}: unsupported CAPF version {version}")
    if len(raw) != 16 + 4 * rows * dim:
        raise DataError(f"{path}: payload size does not match {rows}x{dim} header")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(rows, dim).astype(np.float64)

    out: dict[str, np.ndarray] = {}
    index = _index_path(path).read_text(encoding="utf-8").split("\n")
    for i, line in enumerate(x for x in index if x):
        try:
            image_id, start, count = line.split("\t")
            start, count = int(start), int(count)
        except ValueError:
            raise DataError(f"{_index_path(path)}: record {i}: malformed index line") from None
        if start < 0 or count < 0 or start + count > rows:
            raise DataError(f"{_index_path(path)}: record {i} ({image_id}): rows {start}+{count} exceed {rows}")
        if image_id in out:
            raise DataError(f"{_index_path(path)}: record {i}: duplicate id {image_id!r}")
        out[image_id] = data[start : start + count]
    return out


def load_corpus(
    captions_path: str | Path,
    image_features_path: str | Path,
    text_features_path: str | Path,
    concat_features_path: str | Path | None = None,
) -> Corpus:
    caps = read_captions(captions_path)
    images = read_features(image_features_path)
    texts = read_features(text_features_path)
    concats = read_features(concat_features_path) if concat_features_path else None

    ids = [image_id for image_id, _ in caps]
    for name, table in (("image", images), ("text", texts), ("concatenation", concats)):
        if table is None:
            continue
        extra = sorted(set(table) - set(ids))
        if extra:
            raise DataError(f"{name} features contain ids absent from captions: {extra[:5]}")

    records = []
    for i, (image_id, captions) in enumerate(caps):
        for name, table in (("image", images), ("text", texts), ("concatenation", concats)):
            if table is not None and image_id not in table:
                raise DataError(f"record {i} ({image_id}): missing {name} features")
        img = images[image_id]
        if img.shape[0] != 1:
            raise DataError(f"record {i} ({image_id}): expected 1 image-feature row, got {img.shape[0]}")
        txt = texts[image_id]
        if txt.shape[0] != len(captions):
            raise DataError(
                f"record {i} ({image_id}): {len(captions)} captions but {txt.shape[0]} text-feature rows"
            )
        con = None
        if concats is not None:
            con = concats[image_id]
            if con.shape[0] != 1:
                raise DataError(f"record {i} ({image_id}): expected 1 concatenation-feature row")
            con = con[0]
        records.append(CorpusRecord(image_id, captions, img[0], txt, con))
    return Corpus(tuple(records))


def load_corpus_dir(directory: str | Path) -> Corpus:
    d = Path(directory)
    for name in (CAPTIONS_FILE, IMAGE_FEATURES, TEXT_FEATURES):
        if not (d / name).exists():
            raise FileNotFoundError(f"{d / name} not found")
    concat = d / CONCAT_FEATURES
    return load_corpus(
        d / CAPTIONS_FILE,
        d / IMAGE_FEATURES,
        d / TEXT_FEATURES,
        concat if concat.exists() else None,
    )


def save_corpus_dir(corpus: Corpus, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_captions(d / CAPTIONS_FILE, [(r.image_id, r.captions) for r in corpus])
    write_features(d / IMAGE_FEATURES, [(r.image_id, r.image_feature) for r in corpus])
    write_features(d / TEXT_FEATURES, [(r.image_id, r.text_features) for r in corpus])
    if corpus.has_concat:
        write_features(d / CONCAT_FEATURES, [(r.image_id, r.concat_feature) for r in corpus])


def split(corpus: Corpus, ratio: float = 0.9, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Seeded shuffle, then the first ``round(ratio * N)`` records train."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"split ratio must be in [0, 1], got {ratio}")
    order = np.random.default_rng(seed).permutation(len(corpus))
    n_train = int(round(ratio * len(corpus)))
    return corpus.subset(order[:n_train]), corpus.subset(order[n_train:])


# ---------------------------------------------------------------------------
# synthetic redundant-caption corpus

_SCENES = [
    "airport", "harbor", "forest", "farmland", "stadium", "river", "beach", "desert",
    "parking", "church", "bridge", "meadow", "railway", "viaduct", "quarry", "island",
]
_SYLLABLES = [
    "ba", "ke", "lo", "mi", "nu", "ra", "si", "to", "vu", "ze", "da", "fo", "gi", "ha", "jo",
    "pe", "qui", "sa", "te", "wo", "xi", "yo", "bri", "kla", "dro", "fen", "gor", "mul",
]
_INTROS = [["there", "are"], ["we", "see"], ["here", "are"], ["this", "shows"], ["it", "has"]]
_CONNECTORS = [["and"], ["with"], ["near", "the"], ["beside"], ["of", "different"], ["and", "some"]]
_MODIFIERS = ["kinds", "sizes", "types", "sorts", "groups", "rows"]
_TAILS = [["in", "the"], ["at", "the"], ["around", "the"]]


@dataclass(frozen=True)
class SynthSpec:
    num_images: int = 500
    captions_per_image: int = 5
    duplicate_rate: float = 0.2
    paraphrase_rate: float = 0.4
    num_concepts: int = 8
    noise: float = 0.5
    seed: int = 0
    num_attributes: int = 4
    values_per_attribute: int = 4
    image_dim: int = 64
    text_dim: int = 32
    text_noise: float = 0.3
    noisy_caption_rate: float = 0.0
    noisy_caption_scale: float = 3.0
    hash_buckets: int = 4096

    def __post_init__(self):
        if not (0 <= self.duplicate_rate <= 1 and 0 <= self.paraphrase_rate <= 1):
            raise ValueError("duplicate_rate and paraphrase_rate must lie in [0, 1]")
        if self.duplicate_rate + self.paraphrase_rate > 1 + 1e-12:
            raise ValueError("duplicate_rate + paraphrase_rate must not exceed 1")
        if self.num_images < 1 or self.captions_per_image < 1 or self.num_concepts < 1:
            raise ValueError("num_images, captions_per_image and num_concepts must be positive")

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthSpec":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown synth spec key {key!r}")
            kind = types[key]
            kwargs[key] = float(raw) if kind in ("float", float) else int(raw)
        return replace(cls(), **kwargs)


def _stable_hash(*parts: object) -> int:
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def hashed_text_features(
    texts: Sequence[str],
    dim: int,
    seed: int,
    noise: float,
    buckets: int = 4096,
    noisy_rate: float = 0.0,
    noisy_scale: float = 1.0,
) -> np.ndarray:
    """Mean of hashed token embeddings plus a text-keyed perturbation.

    Identical strings always map to identical vectors; strings sharing
    tokens map to nearby vectors. A ``noisy_rate`` fraction of strings,
    chosen by hash, get their perturbation multiplied by ``noisy_scale``.
    """
    table = np.random.default_rng([seed, 0xC0DE]).standard_normal((buckets, dim))
    out = np.zeros((len(texts), dim))
    for i, text in enumerate(texts):
        toks = textproc.tokenize(text)
        if toks:
            rows = [_stable_hash(seed, t) % buckets for t in toks]
            out[i] = table[rows].mean(axis=0)
        if noise:
            scale = noise
            if noisy_rate and _stable_hash(seed, "quality", text) % 1_000_000 < noisy_rate * 1_000_000:
                scale *= noisy_scale
            out[i] += scale * np.random.default_rng([seed, _stable_hash("txt", text)]).standard_normal(dim)
    return out


def _pseudo_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        w = "".join(rng.choice(_SYLLABLES, size=rng.integers(2, 4)))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _compose(rng: np.random.Generator, concept: str, attrs: list[str]) -> list[str]:
    # at most 3 shared filler tokens in a row, so every 4-gram holds a concept-specific word
    toks = list(_INTROS[rng.integers(len(_INTROS))])
    for k, w in enumerate(attrs):
        toks.append(w)
        if k == 0:
            toks.append(_MODIFIERS[rng.integers(len(_MODIFIERS))])
        elif k < len(attrs) - 1:
            toks.extend(_CONNECTORS[rng.integers(len(_CONNECTORS))])
    toks.extend(_TAILS[rng.integers(len(_TAILS))])
    toks.append(concept)
    return toks


def _paraphrase(rng: np.random.Generator, toks: list[str]) -> list[str]:
    out = list(toks)
    slots = [i for i, t in enumerate(out) if t in _MODIFIERS]
    i = slots[0] if slots else int(rng.integers(len(out)))
    pool = [m for m in _MODIFIERS if m != out[i]]
    out[i] = pool[rng.integers(len(pool))]
    return out


def synth_generate(spec: SynthSpec, out_dir: str | Path | None = None) -> Corpus:
    """Build a corpus of images with redundant caption sets.

    Each image has a latent concept and one value per attribute. Its raw
    feature is the sum of the concept vector and its attribute vectors plus
    Gaussian noise. Fresh captions name the concept and a random subset of
    the image's attribute words; with ``duplicate_rate`` a caption copies an
    earlier one verbatim and with ``paraphrase_rate`` it copies one with a
    single modifier word substituted. All content words are specific to one
    concept.
    """
    rng = np.random.default_rng(spec.seed)
    taken = set(_SCENES) | {w for group in _INTROS + _CONNECTORS + _TAILS for w in group} | set(_MODIFIERS)
    names = _SCENES[: spec.num_concepts]
    if spec.num_concepts > len(_SCENES):
        names = names + _pseudo_words(rng, spec.num_concepts - len(_SCENES), taken)
    A, V = spec.num_attributes, spec.values_per_attribute
    vocab = [[_pseudo_words(rng, V, taken) for _ in range(A)] for _ in range(spec.num_concepts)]

    concept_vecs = rng.standard_normal((spec.num_concepts, spec.image_dim))
    attr_vecs = rng.standard_normal((spec.num_concepts, A, V, spec.image_dim))

    width = len(str(spec.num_images - 1))
    rows = []
    for i in range(spec.num_images):
        k = int(rng.integers(spec.num_concepts))
        values = rng.integers(V, size=A)
        image = concept_vecs[k] + attr_vecs[k, np.arange(A), values].sum(axis=0)
        image = image + spec.noise * rng.standard_normal(spec.image_dim)
        words = [vocab[k][a][values[a]] for a in range(A)]

        caps: list[list[str]] = []
        for j in range(spec.captions_per_image):
            u = rng.random()
            if j > 0 and u < spec.duplicate_rate:
                caps.append(list(caps[rng.integers(j)]))
            elif j > 0 and u < spec.duplicate_rate + spec.paraphrase_rate:
                caps.append(_paraphrase(rng, caps[rng.integers(j)]))
            else:
                n_attr = int(rng.integers(1, min(A, 2) + 1))
                chosen = sorted(rng.choice(A, size=n_attr, replace=False))
                caps.append(_compose(rng, names[k], [words[a] for a in chosen]))
        order = rng.permutation(len(caps))
        captions = tuple(" ".join(caps[o]) for o in order)
        rows.append((f"img{i:0{width}d}", captions, image))

    records = []
    for image_id, captions, image in rows:
        kw = dict(noisy_rate=spec.noisy_caption_rate, noisy_scale=spec.noisy_caption_scale)
        txt = hashed_text_features(captions, spec.text_dim, spec.seed, spec.text_noise, spec.hash_buckets, **kw)
        con = hashed_text_features(
            [concatenate_captions(captions)], spec.text_dim, spec.seed, spec.text_noise, spec.hash_buckets
        )[0]
        # round through float32 so the in-memory corpus equals what is written to disk
        records.append(
            CorpusRecord(
                image_id,
                captions,
                image.astype(np.float32).astype(np.float64),
                txt.astype(np.float32).astype(np.float64),
                con.astype(np.float32).astype(np.float64),
            )
        )
    corpus = Corpus(tuple(records))
    if out_dir is not None:
        save_corpus_dir(corpus, out_dir)
    return corpus
