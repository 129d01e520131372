"""Multimodal fused graph convolutional network for emotion recognition in conversation."""

from .config import RunConfig
from .data import Corpus, Dialogue, SynthSpec, Utterance, load_corpus, save_corpus, split_corpus, synthesize_corpus
from .model import ModelSpec, forward, init_params
from .training import RunReport, evaluate, load_checkpoint, predict, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "Dialogue", "ModelSpec", "RunConfig", "RunReport", "SynthSpec", "Utterance",
    "evaluate", "forward", "init_params", "load_checkpoint", "load_corpus", "predict",
    "save_checkpoint", "save_corpus", "split_corpus", "synthesize_corpus", "train",
]
