"""Training loop, prediction, run reports and checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .data import Corpus, split_corpus
from .evaluation import accuracy, confusion_matrix, weighted_f1
from .model import (
    ModelSpec,
    cross_entropy,
    forward,
    init_params,
    inverse_frequency_weights,
    l2_penalty,
    loss_focal,
    param_shapes,
)
from .numerics import Tensor
from .rng import stream

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mmgcn-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class RunReport:
    config: dict[str, Any]
    fingerprint: str
    seed: int
    epochs: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = 0.0
    val_weighted_f1: float = 0.0
    val_accuracy: float = 0.0
    confusion_matrix: list[list[int]] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    num_train_dialogues: int = 0
    num_val_dialogues: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def dialogue_loss(spec: ModelSpec, trace, dialogue, params, class_weights=None) -> Tensor:
    cfg = spec.config
    if cfg.loss == "focal":
        data = loss_focal(trace.probs, dialogue.labels, class_weights, cfg.focal_gamma)
    else:
        data = cross_entropy(trace.probs, dialogue.labels)
    return data + l2_penalty(params, cfg.l2, cfg.l2_mode)


def predict(corpus: Corpus, params: Mapping[str, Tensor], spec: ModelSpec) -> list[np.ndarray]:
    """Argmax class per utterance, one array per dialogue; dropout off."""
    return [forward(spec, d, params, training=False).predictions() for d in corpus.dialogues]


def evaluate(corpus: Corpus, params: Mapping[str, Tensor], spec: ModelSpec) -> dict[str, Any]:
    preds = predict(corpus, params, spec)
    gold = corpus.labels()
    pred = np.concatenate(preds) if preds else np.zeros(0, np.int64)
    k = corpus.num_classes
    return {
        "weighted_f1": weighted_f1(gold, pred, k),
        "accuracy": accuracy(gold, pred),
        "confusion_matrix": confusion_matrix(gold, pred, k).tolist(),
        "num_utterances": int(len(gold)),
    }


def train(
    corpus: Corpus,
    config: RunConfig,
    val_corpus: Corpus | None = None,
    on_epoch: Callable[[dict[str, float]], None] | None = None,
) -> tuple[dict[str, Tensor], RunReport, ModelSpec]:
    """Adam on one dialogue graph per step, returning the best-validation parameters.

    Without ``val_corpus``, ``config.val_fraction`` of the dialogues is held out;
    when that is 0 (or the corpus is too small) selection uses the training set.
    """
    config.validate()
    if not corpus.dialogues:
        raise ValueError("training corpus has no dialogues")
    spec = ModelSpec.for_corpus(config, corpus)
    cfg = spec.config
    train_set, val_set = corpus, val_corpus
    if val_set is None:
        n_val = int(round(cfg.val_fraction * len(corpus.dialogues)))
        if n_val >= 1 and len(corpus.dialogues) - n_val >= 1:
            train_set, val_set = split_corpus(corpus, 1.0 - n_val / len(corpus.dialogues), cfg.seed, ("train", "val"))
        else:
            val_set = corpus

    params = init_params(spec, cfg.seed)
    state = nx.AdamState(lr=cfg.lr)
    shuffle_rng = stream(cfg.seed, "shuffle")
    dropout_rng = stream(cfg.seed, "dropout")
    class_weights = inverse_frequency_weights(train_set.labels(), spec.num_classes) if cfg.loss == "focal" else None

    report = RunReport(
        config=cfg.to_dict(),
        fingerprint=cfg.fingerprint(),
        seed=cfg.seed,
        class_names=list(corpus.class_names),
        num_train_dialogues=len(train_set.dialogues),
        num_val_dialogues=len(val_set.dialogues),
    )
    best = evaluate(val_set, params, spec)
    best_params = dict(params)
    report.best_val_f1 = best["weighted_f1"]
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in shuffle_rng.permutation(len(train_set.dialogues)):
            dlg = train_set.dialogues[idx]
            with nx.Tape() as tape:
                trace = forward(spec, dlg, params, training=True, rng=dropout_rng)
                loss = dialogue_loss(spec, trace, dlg, params, class_weights)
            value = loss.item()
            grads = nx.backward(tape, loss, wrt=params)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss or gradient at epoch {epoch}, dialogue {dlg.id!r}")
            params = nx.adam_step(params, grads, state)
            losses.append(value)
        metrics = evaluate(val_set, params, spec)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "val_f1": metrics["weighted_f1"],
               "val_accuracy": metrics["accuracy"]}
        report.epochs.append(row)
        log.info("epoch %d loss %.4f val_f1 %.4f", epoch, row["loss"], row["val_f1"])
        if on_epoch is not None:
            on_epoch(row)
        if metrics["weighted_f1"] > best["weighted_f1"]:
            best, best_params, stale = metrics, dict(params), 0
            report.best_epoch = epoch
            report.best_val_f1 = metrics["weighted_f1"]
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                log.info("early stop after %d epochs without improvement", stale)
                break
    report.val_weighted_f1 = best["weighted_f1"]
    report.val_accuracy = best["accuracy"]
    report.confusion_matrix = best["confusion_matrix"]
    return best_params, report, spec


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, params: Mapping[str, Tensor], spec: ModelSpec, class_names) -> None:
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": spec.config.to_dict(),
        "fingerprint": spec.config.fingerprint(),
        "seed": spec.config.seed,
        "dims": dict(spec.dims),
        "num_classes": spec.num_classes,
        "class_names": list(class_names),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()} for name, t in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_checkpoint(path: str | Path, expected: RunConfig | None = None):
    """Returns ``(params, spec, class_names)``.

    With ``expected``, its model fingerprint must match the stored one.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    config = RunConfig.from_dict(blob["config"])
    if config.fingerprint() != blob["fingerprint"]:
        raise CheckpointError(f"{path}: stored fingerprint does not match stored config")
    if expected is not None and expected.fingerprint() != blob["fingerprint"]:
        raise CheckpointError(
            f"{path}: config mismatch (checkpoint {blob['fingerprint']}, requested {expected.fingerprint()})"
        )
    spec = ModelSpec(config, blob["dims"], int(blob["num_classes"]))
    shapes = param_shapes(spec)
    stored = blob["params"]
    if set(shapes) != set(stored):
        raise CheckpointError(f"{path}: parameter names do not match the configured model")
    params = {}
    for name, (shape, _) in shapes.items():
        if tuple(stored[name]["shape"]) != tuple(shape):
            raise CheckpointError(f"{path}: parameter {name} has shape {stored[name]['shape']}, expected {list(shape)}")
        params[name] = nx.parameter(np.array(stored[name]["data"], dtype=np.float64).reshape(shape), name=name)
    return params, spec, tuple(blob["class_names"])
