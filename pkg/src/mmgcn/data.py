"""Corpus model, JSON-Lines storage, synthetic corpora and dialogue-level splits."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import stream

MODALITIES = ("a", "v", "t")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    a: tuple[float, ...]
    v: tuple[float, ...]
    t: tuple[float, ...]
    speaker: int
    label: int

    def features(self, modality: str) -> tuple[float, ...]:
        return getattr(self, modality)


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise CorpusError(f"dialogue {self.id!r} has no utterances")
        seen = {u.speaker for u in self.utterances}
        if seen != set(range(len(seen))):
            raise CorpusError(
                f"dialogue {self.id!r}: speaker indices {sorted(seen)} are not a contiguous prefix 0..k"
            )

    def __len__(self) -> int:
        return len(self.utterances)

    @cached_property
    def _matrices(self) -> dict[str, np.ndarray]:
        return {m: np.array([u.features(m) for u in self.utterances], dtype=np.float64) for m in MODALITIES}

    def features(self, modality: str) -> np.ndarray:
        """N x d_m matrix of raw features for one modality."""
        return self._matrices[modality]

    @cached_property
    def speakers(self) -> np.ndarray:
        return np.array([u.speaker for u in self.utterances], dtype=np.int64)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([u.label for u in self.utterances], dtype=np.int64)

    @property
    def num_speakers(self) -> int:
        return int(self.speakers.max()) + 1


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[Dialogue, ...]
    class_names: tuple[str, ...]
    dims: Mapping[str, int]
    max_speakers: int
    split: str = "train"

    def __post_init__(self):
        k = len(self.class_names)
        for dlg in self.dialogues:
            if dlg.num_speakers > self.max_speakers:
                raise CorpusError(
                    f"dialogue {dlg.id!r} has {dlg.num_speakers} speakers, more than max_speakers={self.max_speakers}"
                )
            for i, u in enumerate(dlg.utterances):
                if not 0 <= u.label < k:
                    raise CorpusError(f"dialogue {dlg.id!r} utterance {i}: label {u.label} outside {k} classes")
                for m in MODALITIES:
                    if len(u.features(m)) != self.dims[m]:
                        raise CorpusError(
                            f"dialogue {dlg.id!r} utterance {i}: modality {m} has dim "
                            f"{len(u.features(m))}, expected {self.dims[m]}"
                        )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_utterances(self) -> int:
        return int(np.sum([len(d) for d in self.dialogues]))

    def labels(self) -> np.ndarray:
        return np.concatenate([d.labels for d in self.dialogues]) if self.dialogues else np.zeros(0, np.int64)

    def subset(self, dialogues: Iterable[Dialogue], split: str | None = None) -> "Corpus":
        return Corpus(tuple(dialogues), self.class_names, dict(self.dims), self.max_speakers, split or self.split)

    def dialogue(self, dialogue_id: str) -> Dialogue:
        for d in self.dialogues:
            if d.id == dialogue_id:
                return d
        raise KeyError(f"no dialogue with id {dialogue_id!r}")


# --------------------------------------------------------------------------
# JSON Lines storage


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "meta": {
                "classes": list(corpus.class_names),
                "dims": {m: int(corpus.dims[m]) for m in MODALITIES},
                "max_speakers": corpus.max_speakers,
            }
        }
        fh.write(json.dumps(meta) + "\n")
        for dlg in corpus.dialogues:
            rec = {
                "id": dlg.id,
                "utterances": [
                    {
                        "speaker": u.speaker,
                        "label": corpus.class_names[u.label],
                        "a": list(u.a),
                        "v": list(u.v),
                        "t": list(u.t),
                    }
                    for u in dlg.utterances
                ],
            }
            fh.write(json.dumps(rec) + "\n")


def _float_vector(value, where: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise CorpusError(f"{where}: expected a list of numbers")
    try:
        vec = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise CorpusError(f"{where}: non-numeric feature value") from None
    if not all(math.isfinite(x) for x in vec):
        raise CorpusError(f"{where}: non-finite feature value")
    return vec


def load_corpus(
    path: str | Path, expected_dims: Mapping[str, int] | None = None, split: str = "train"
) -> Corpus:
    """Read and validate a corpus file. Errors name the offending line."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
        meta = header["meta"]
        classes = tuple(str(c) for c in meta["classes"])
        dims = {m: int(meta["dims"][m]) for m in MODALITIES}
        max_speakers = int(meta["max_speakers"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"{path}:1: malformed meta header ({exc})") from None
    if expected_dims is not None:
        for m in MODALITIES:
            if m in expected_dims and int(expected_dims[m]) != dims[m]:
                raise CorpusError(
                    f"{path}: feature dim mismatch for modality {m}: expected {expected_dims[m]}, found {dims[m]}"
                )
    label_index = {c: i for i, c in enumerate(classes)}
    dialogues = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{where}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or "id" not in rec or "utterances" not in rec:
            raise CorpusError(f"{where}: record needs 'id' and 'utterances'")
        utts = []
        for j, u in enumerate(rec["utterances"]):
            uwhere = f"{where}: utterance {j}"
            for key in ("speaker", "label", *MODALITIES):
                if key not in u:
                    raise CorpusError(f"{uwhere}: missing field '{key}'")
            if u["label"] not in label_index:
                raise CorpusError(f"{uwhere}: unknown label {u['label']!r}")
            vecs = {}
            for m in MODALITIES:
                vecs[m] = _float_vector(u[m], f"{uwhere} field '{m}'")
                if len(vecs[m]) != dims[m]:
                    raise CorpusError(
                        f"{uwhere}: field '{m}' has dim {len(vecs[m])}, expected {dims[m]}"
                    )
            spk = u["speaker"]
            if not isinstance(spk, int) or spk < 0:
                raise CorpusError(f"{uwhere}: speaker must be a non-negative int")
            if spk >= max_speakers:
                raise CorpusError(f"{uwhere}: speaker {spk} exceeds max_speakers={max_speakers}")
            utts.append(Utterance(vecs["a"], vecs["v"], vecs["t"], spk, label_index[u["label"]]))
        try:
            dialogues.append(Dialogue(str(rec["id"]), tuple(utts)))
        except CorpusError as exc:
            raise CorpusError(f"{where}: {exc}") from None
    return Corpus(tuple(dialogues), classes, dims, max_speakers, split)


# --------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus generator.

    Each utterance carries a latent emotion. Every speaker holds an emotion
    state that, when they speak, persists with probability ``persistence``
    and otherwise is redrawn from that speaker's class prior. A modality's
    feature vector is ``informativeness[m] * separation * prototype[m][label]``
    plus unit Gaussian noise, so ``informativeness`` scales how much label
    signal each modality carries. ``speaker_bias`` tilts each local speaker's
    prior toward its own subset of classes.
    """

    num_dialogues: int = 30
    len_range: tuple[int, int] = (5, 50)
    num_classes: int = 6
    max_speakers: int = 2
    dims: Mapping[str, int] = field(default_factory=lambda: {"a": 20, "v": 12, "t": 24})
    informativeness: Mapping[str, float] = field(default_factory=lambda: {"a": 0.6, "v": 0.3, "t": 0.9})
    separation: float = 2.5
    persistence: float = 0.7
    turn_taking: float = 0.7
    speaker_bias: float = 0.0
    class_names: Sequence[str] | None = None
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.num_dialogues < 1:
            problems.append("num_dialogues must be >= 1")
        lo, hi = self.len_range
        if lo < 1 or hi < lo:
            problems.append(f"len_range must satisfy 1 <= lo <= hi, got {self.len_range}")
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if self.max_speakers < 1:
            problems.append("max_speakers must be >= 1")
        for m in MODALITIES:
            if self.dims.get(m, 0) < 1:
                problems.append(f"dims[{m}] must be >= 1")
            if not 0.0 <= self.informativeness.get(m, -1.0) <= 1.0:
                problems.append(f"informativeness[{m}] must be in [0, 1]")
        for name in ("persistence", "turn_taking", "speaker_bias"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must be in [0, 1]")
        if self.separation < 0:
            problems.append("separation must be >= 0")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            problems.append("class_names length must equal num_classes")
        if problems:
            raise CorpusError("invalid synthetic spec: " + "; ".join(problems))


IEMOCAP_CLASSES = ("happy", "sad", "neutral", "angry", "excited", "frustrated")
MELD_CLASSES = ("anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise")


def default_class_names(k: int) -> tuple[str, ...]:
    if k == len(IEMOCAP_CLASSES):
        return IEMOCAP_CLASSES
    if k == len(MELD_CLASSES):
        return MELD_CLASSES
    return tuple(f"class{i}" for i in range(k))


def _speaker_priors(k: int, num_speakers: int, bias: float) -> np.ndarray:
    groups = min(num_speakers, k)
    priors = np.full((num_speakers, k), 1.0 / k)
    if bias > 0 and groups > 1:
        for s in range(num_speakers):
            pref = np.array([c % groups == s % groups for c in range(k)], dtype=float)
            priors[s] = (1 - bias) / k + bias * pref / pref.sum()
    return priors


def synthesize_corpus(spec: SynthSpec) -> Corpus:
    spec.validate()
    rng = stream(spec.seed, "synth")
    k = spec.num_classes
    protos = {}
    for m in MODALITIES:
        p = rng.standard_normal((k, spec.dims[m]))
        protos[m] = p / np.linalg.norm(p, axis=1, keepdims=True)
    priors = _speaker_priors(k, spec.max_speakers, spec.speaker_bias)
    dialogues = []
    for n in range(spec.num_dialogues):
        length = int(rng.integers(spec.len_range[0], spec.len_range[1] + 1))
        parties = spec.max_speakers if spec.max_speakers <= 2 else int(rng.integers(2, spec.max_speakers + 1))
        turns = [0]
        for _ in range(length - 1):
            if parties > 1 and rng.random() < spec.turn_taking:
                turns.append((turns[-1] + 1) % parties)
            else:
                turns.append(int(rng.integers(parties)))
        # relabel by first appearance so indices form a contiguous prefix
        order: dict[int, int] = {}
        for s in turns:
            order.setdefault(s, len(order))
        turns = [order[s] for s in turns]
        state: dict[int, int] = {}
        utts = []
        for s in turns:
            if s not in state or rng.random() >= spec.persistence:
                state[s] = int(rng.choice(k, p=priors[s]))
            y = state[s]
            feats = {}
            for m in MODALITIES:
                signal = spec.informativeness[m] * spec.separation * protos[m][y]
                feats[m] = tuple(float(x) for x in signal + rng.standard_normal(spec.dims[m]))
            utts.append(Utterance(feats["a"], feats["v"], feats["t"], s, y))
        dialogues.append(Dialogue(f"dlg{n:04d}", tuple(utts)))
    names = tuple(spec.class_names) if spec.class_names is not None else default_class_names(k)
    return Corpus(tuple(dialogues), names, dict(spec.dims), spec.max_speakers, "train")


# --------------------------------------------------------------------------
# splits


def split_corpus(corpus: Corpus, ratio: float, seed: int, names: tuple[str, str] = ("train", "test")):
    """Shuffle dialogues with ``seed`` and cut at ``floor(ratio * n)``."""
    if not 0.0 < ratio < 1.0:
        raise CorpusError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(corpus.dialogues)
    n_first = int(math.floor(ratio * n + 1e-9))
    if n_first == 0 or n_first == n:
        raise CorpusError(f"split of {n} dialogues at ratio {ratio} leaves one side empty")
    perm = stream(seed, "split").permutation(n)
    first = sorted(perm[:n_first])
    second = sorted(perm[n_first:])
    return (
        corpus.subset((corpus.dialogues[i] for i in first), names[0]),
        corpus.subset((corpus.dialogues[i] for i in second), names[1]),
    )
