import numpy as np
import pytest

from capagg import aggregation as agg
from capagg.cli import main
from capagg.data import write_captions


@pytest.fixture
def corpus_dir(tmp_path):
    spec = tmp_path / "synth.cfg"
    spec.write_text("num_images = 40\nnum_concepts = 4\nseed = 2\n")
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data"


@pytest.fixture
def train_cfg(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("lr = 0.003\nmax_epochs = 2\nbatch_size = 16\n")
    return path


def test_weights_command(tmp_path, fig1, capsys):
    caps = tmp_path / "caps.tsv"
    write_captions(caps, [("ucm_1", fig1), ("solo", ["just one caption here"])])
    for name in ("a.tsv", "b.tsv"):
        assert main(["weights", "--captions", str(caps), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    w = agg.read_weight_sidecar(tmp_path / "a.tsv")
    assert len(w["ucm_1"]) == 5 and abs(w["ucm_1"].sum() - 1) < 1e-12
    assert w["solo"].tolist() == [1.0]


def test_exit_codes(tmp_path, capsys):
    assert main(["weights", "--captions", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "w")]) == 2
    assert "missing.tsv" in capsys.readouterr().err
    assert main(["weights"]) == 1
    assert main([]) == 1
    assert main(["evaluate", "--checkpoint", "x", "--data", "y", "--k", "five"]) == 1
    bad = tmp_path / "caps.tsv"
    bad.write_text("a\t3\tonly one\n")
    assert main(["weights", "--captions", str(bad), "--out", str(tmp_path / "w")]) == 2


def test_synth_is_byte_identical(tmp_path, corpus_dir):
    spec = tmp_path / "synth.cfg"
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "again")]) == 0
    for f in corpus_dir.iterdir():
        if f.suffix != ".log":
            assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes(), f.name
    assert (corpus_dir / "synth.log").exists()


def test_seed_env_overrides(tmp_path, monkeypatch, corpus_dir, train_cfg):
    monkeypatch.setenv("CAPAGG_SEED", "7")
    assert main(["train", "--config", str(train_cfg), "--data", str(corpus_dir), "--out", str(tmp_path / "r")]) == 0
    assert "seed = 7" in (tmp_path / "r" / "report.txt").read_text()
    monkeypatch.setenv("CAPAGG_SEED", "x")
    assert main(["train", "--config", str(train_cfg), "--data", str(corpus_dir), "--out", str(tmp_path / "r")]) == 1


def test_train_evaluate_report(tmp_path, corpus_dir, train_cfg, capsys):
    runs = tmp_path / "runs"
    for strategy in ("mean_feature", "wfa_attention"):
        out = runs / strategy
        args = ["train", "--config", str(train_cfg), "--strategy", strategy, "--data", str(corpus_dir), "--out", str(out)]
        assert main(args) == 0
        assert {p.name for p in out.iterdir()} == {"best.ckpt", "report.txt", "report.csv", "train.log"}
        assert main(["evaluate", "--checkpoint", str(out / "best.ckpt"), "--data", str(corpus_dir), "--k", "5,20"]) == 0
        header = (out / "eval.csv").read_text().splitlines()[0]
        assert header == "strategy,bleu4@5,map@5,bleu4@20,map@20,flops"

    capsys.readouterr()
    assert main(["report", "--runs", str(runs)]) == 0
    text = capsys.readouterr().out
    assert "mean_feature" in text and "wfa_attention" in text
    rows = (runs / "report.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("run,strategy,")
    assert float(rows[2].split(",")[-1]) == pytest.approx(36.47)


def test_train_reports_are_byte_identical(tmp_path, corpus_dir, train_cfg):
    for name in ("a", "b"):
        args = ["train", "--config", str(train_cfg), "--strategy", "random_selection"]
        assert main(args + ["--data", str(corpus_dir), "--out", str(tmp_path / name)]) == 0
    for f in ("report.txt", "report.csv", "best.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_evaluate_rejects_oversized_k(corpus_dir, train_cfg, tmp_path):
    out = tmp_path / "r"
    assert main(["train", "--config", str(train_cfg), "--data", str(corpus_dir), "--out", str(out)]) == 0
    args = ["evaluate", "--checkpoint", str(out / "best.ckpt"), "--data", str(corpus_dir)]
    assert main(args + ["--k", "41"]) == 2
    assert main(args + ["--k", "3", "--subset", "validation"]) == 0


def test_numeric_failure_exit_code(tmp_path, corpus_dir, train_cfg):
    cfg = tmp_path / "nan.cfg"
    cfg.write_text(train_cfg.read_text() + "temperature = 1e-320\n")
    assert main(["train", "--config", str(cfg), "--data", str(corpus_dir), "--out", str(tmp_path / "r")]) == 3


def test_flops_command(tmp_path, capsys):
    cost = tmp_path / "cost.cfg"
    cost.write_text("image = 1\ntext_per_token = 0.1\nprojection = 0\nweigher = 0\nnum_captions = 5\navg_caption_length = 10\n")
    assert main(["flops", "--cost-model", str(cost), "--m", "3", "--csv"]) == 0
    rows = dict(line.split(",") for line in capsys.readouterr().out.splitlines()[1:])
    assert float(rows["replication"]) / float(rows["random_selection"]) == pytest.approx(3.0, abs=1e-12)
    cost.write_text("image = -1\n")
    assert main(["flops", "--cost-model", str(cost)]) == 2
    assert np.isfinite(float(rows["wfa_attention"]))
