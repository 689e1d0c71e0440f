"""Redundancy-aware weighted feature aggregation for multi-caption image-text pretraining."""

from .aggregation import Strategy, StrategySpec
from .data import Corpus, SynthSpec, load_corpus, load_corpus_dir, split, synth_generate
from .evaluation import CostModel, flops_estimate
from .textproc import bleu4, tokenize, uniqueness
from .training import TrainConfig, nt_xent, train

__version__ = "0.1.0"

__all__ = [
    "CostModel",
    "Corpus",
    "Strategy",
    "StrategySpec",
    "SynthSpec",
    "TrainConfig",
    "bleu4",
    "flops_estimate",
    "load_corpus",
    "load_corpus_dir",
    "nt_xent",
    "split",
    "synth_generate",
    "tokenize",
    "train",
    "uniqueness",
]
