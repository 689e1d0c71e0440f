import filecmp
import itertools

import numpy as np
import pytest

from capagg import aggregation as agg
from capagg.data import (
    CAPTIONS_FILE,
    UNIT_SEP,
    DataError,
    SynthSpec,
    load_corpus_dir,
    read_captions,
    read_features,
    save_corpus_dir,
    split,
    synth_generate,
    write_captions,
    write_features,
)
from capagg.textproc import bleu4, tokenize, uniqueness


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(SynthSpec(num_images=80, seed=1))


def test_captions_round_trip(tmp_path, fig1):
    rows = [("ucm_1", tuple(fig1)), ("b", ("one caption",))]
    path = tmp_path / "c.tsv"
    write_captions(path, rows)
    assert read_captions(path) == rows
    assert path.read_text().splitlines()[1] == "b\t1\tone caption"
    assert path.read_text().splitlines()[0].count(UNIT_SEP) == 4


def test_caption_errors_name_the_record(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text(f"a\t2\tx{UNIT_SEP}y\nb\t3\tonly{UNIT_SEP}two\n")
    with pytest.raises(DataError, match=r"record 1 \(b\)"):
        read_captions(path)
    path.write_text("a\tx\ty\n")
    with pytest.raises(DataError, match="record 0"):
        read_captions(path)
    with pytest.raises(DataError):
        write_captions(path, [("a", ("tab\tinside",))])


def test_features_round_trip(tmp_path):
    path = tmp_path / "f.capf"
    a = np.arange(6, dtype=np.float64).reshape(2, 3) / 4
    write_features(path, [("a", a), ("b", np.ones(3))])
    back = read_features(path)
    assert np.array_equal(back["a"], a)
    assert back["b"].shape == (1, 3)
    assert path.read_bytes()[:4] == b"CAPF"
    assert (tmp_path / "f.idx").read_text() == "a\t0\t2\nb\t2\t1\n"

    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataError):
        read_features(path)


def test_corpus_dir_round_trip_and_errors(tmp_path, corpus):
    save_corpus_dir(corpus, tmp_path / "c")
    back = load_corpus_dir(tmp_path / "c")
    assert back.ids == corpus.ids
    for r, s in zip(corpus, back):
        assert r.captions == s.captions
        assert np.array_equal(r.image_feature, s.image_feature)
        assert np.array_equal(r.text_features, s.text_features)
        assert np.array_equal(r.concat_feature, s.concat_feature)

    # drop one caption from record 3: the text-feature rows no longer match
    lines = (tmp_path / "c" / CAPTIONS_FILE).read_text().splitlines()
    image_id, m, joined = lines[3].split("\t")
    lines[3] = "\t".join([image_id, str(int(m) - 1), UNIT_SEP.join(joined.split(UNIT_SEP)[1:])])
    (tmp_path / "c" / CAPTIONS_FILE).write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=rf"record 3 \({image_id}\)"):
        load_corpus_dir(tmp_path / "c")
    with pytest.raises(FileNotFoundError):
        load_corpus_dir(tmp_path / "missing")


def test_split(corpus):
    a, b = split(corpus, 0.9, 0)
    assert (len(a), len(b)) == (72, 8)
    assert set(a.ids).isdisjoint(b.ids) and set(a.ids) | set(b.ids) == set(corpus.ids)
    assert split(corpus, 0.9, 0)[1].ids == b.ids
    assert split(corpus, 0.9, 1)[1].ids != b.ids
    with pytest.raises(ValueError):
        split(corpus, 1.5)


def test_synth_is_deterministic(tmp_path):
    spec = SynthSpec(num_images=40, seed=9)
    synth_generate(spec, tmp_path / "a")
    synth_generate(spec, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 7  # captions + three feature files with their indexes
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []
    other = synth_generate(SynthSpec(num_images=40, seed=10))
    assert other[0].captions != load_corpus_dir(tmp_path / "a")[0].captions


def test_synth_shape(corpus):
    assert len(corpus) == 80
    assert all(r.num_captions == 5 for r in corpus)
    assert corpus.image_dim == 64 and corpus.text_dim == 32 and corpus.has_concat
    for r in corpus:
        assert all(len(tokenize(c)) >= 4 for c in r.captions)


def test_full_duplication_gives_uniform_weights():
    c = synth_generate(SynthSpec(num_images=10, duplicate_rate=1.0, paraphrase_rate=0.0, seed=2))
    for r in c:
        assert len(set(r.captions)) == 1
        np.testing.assert_array_equal(agg.uniqueness_weights(r.captions), np.full(5, 0.2))


def test_cross_concept_captions_share_no_4grams(corpus):
    concepts = {}
    for r in corpus:
        concepts.setdefault(tokenize(r.captions[0])[-1], []).append(r)
    assert len(concepts) == 8
    groups = list(concepts.values())
    for g1, g2 in itertools.combinations(groups, 2):
        a, b = tokenize(g1[0].captions[0]), [tokenize(c) for c in g2[0].captions]
        assert bleu4(a, b) < 0.01


def test_duplicates_are_less_unique(corpus):
    dup, fresh = [], []
    for r in corpus:
        toks = [tokenize(c) for c in r.captions]
        for j, c in enumerate(r.captions):
            (dup if r.captions.count(c) > 1 else fresh).append(uniqueness(toks, j))
    assert dup and fresh
    assert np.mean(dup) < np.mean(fresh)
    assert max(dup) == 0.0


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(duplicate_rate=0.7, paraphrase_rate=0.4)
    with pytest.raises(ValueError):
        SynthSpec(duplicate_rate=-0.1)
    spec = SynthSpec.from_mapping({"num_images": "12", "duplicate_rate": "0.5", "paraphrase_rate": "0.1"})
    assert (spec.num_images, spec.duplicate_rate) == (12, 0.5)


def test_split_edge_cases(corpus):
    ten = corpus.subset(range(10))
    a, b = split(ten, 0.9, 3)
    assert (len(a), len(b)) == (9, 1)
    a, b = split(ten, 1.0, 3)
    assert (len(a), len(b)) == (10, 0)


def test_two_record_fixture(tmp_path):
    rows = [("x", ("a red roof here", "two red roofs")), ("y", ("one green field",))]
    write_captions(tmp_path / "c.tsv", rows)
    write_features(tmp_path / "i.capf", [("x", np.ones(3)), ("y", np.zeros(3))])
    write_features(tmp_path / "t.capf", [("x", np.eye(2)), ("y", np.ones((1, 2)))])
    from capagg.data import load_corpus

    c = load_corpus(tmp_path / "c.tsv", tmp_path / "i.capf", tmp_path / "t.capf")
    assert len(c) == 2 and c.image_dim == 3 and c.text_dim == 2
    write_features(tmp_path / "t.capf", [("x", np.eye(2)), ("y", np.ones((2, 2)))])
    with pytest.raises(DataError, match=r"record 1 \(y\)"):
        load_corpus(tmp_path / "c.tsv", tmp_path / "i.capf", tmp_path / "t.capf")
    write_features(tmp_path / "t.capf", [("x", np.eye(2)), ("z", np.ones((1, 2)))])
    with pytest.raises(DataError):
        load_corpus(tmp_path / "c.tsv", tmp_path / "i.capf", tmp_path / "t.capf")


def test_duplicates_less_unique_within_each_set(corpus):
    checked = 0
    for r in corpus:
        toks = [tokenize(c) for c in r.captions]
        dup = [uniqueness(toks, j) for j, c in enumerate(r.captions) if r.captions.count(c) > 1]
        solo = [uniqueness(toks, j) for j, c in enumerate(r.captions) if r.captions.count(c) == 1]
        if dup and solo:
            assert max(dup) < min(solo)
            checked += 1
    assert checked > 10
