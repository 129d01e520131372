"""Metrics, the paired t-test and the ablation harness."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np

AXES = ("modality_subset", "num_layers", "speaker_embedding", "fusion")
AXIS_ALIASES = {"modality": "modality_subset", "modalities": "modality_subset", "layers": "num_layers",
                "speaker": "speaker_embedding"}
DEFAULT_VALUES = {
    "modality_subset": ["a", "v", "t", "at", "vt", "avt"],
    "num_layers": [1, 2, 4, 8, 16, 32],
    "speaker_embedding": ["with", "without"],
    "fusion": ["mmgcn", "early", "late", "gated"],
}


# --------------------------------------------------------------------------
# metrics


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    """Counts with rows = gold class, columns = predicted class."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError(f"gold and pred differ in length: {gold.shape} vs {pred.shape}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    return cm


def accuracy(gold: Sequence[int], pred: Sequence[int]) -> float:
    gold = np.asarray(gold)
    pred = np.asarray(pred)
    if len(gold) == 0:
        raise ValueError("accuracy of an empty label list")
    return float(np.mean(gold == pred))


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0).astype(float)
    gold_tot = cm.sum(axis=1).astype(float)
    denom = pred_tot + gold_tot
    # F1 = 2TP / (2TP + FP + FN), 0 when the class is absent from both
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def weighted_f1(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> float:
    """Per-class F1 averaged with weights equal to gold-class support."""
    if len(gold) == 0:
        raise ValueError("weighted_f1 of an empty label list")
    cm = confusion_matrix(gold, pred, num_classes)
    support = cm.sum(axis=1).astype(float)
    return float(per_class_f1(cm) @ support / support.sum())


# --------------------------------------------------------------------------
# significance


class TTest(NamedTuple):
    statistic: float
    pvalue: float
    df: int
    degenerate: bool


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    # Lentz's continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> TTest:
    """Two-sided paired t-test of ``a - b``.

    Zero variance of the differences (up to float rounding) is degenerate:
    identical lists give ``t = nan, p = 1``; a constant nonzero shift gives
    ``t = +-inf, p = 0``.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length 1-D sequences")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    diff = a - b
    df = n - 1
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd <= 1e-12 * max(1.0, float(np.abs(diff).max())):
        if np.all(diff == 0.0):
            return TTest(float("nan"), 1.0, df, True)
        return TTest(math.copysign(math.inf, mean), 0.0, df, True)
    t = mean / (sd / math.sqrt(n))
    return TTest(t, student_t_two_sided_p(t, df), df, False)


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationGrid:
    axis: str
    values: list[Any]
    reference: Any = None

    def __post_init__(self):
        self.axis = AXIS_ALIASES.get(self.axis, self.axis)
        if self.axis not in AXES:
            raise ValueError(f"unknown ablation axis {self.axis!r}; choose from {AXES}")
        if not self.values:
            self.values = list(DEFAULT_VALUES[self.axis])
        self.values = [_coerce(self.axis, v) for v in self.values]
        if self.reference is None:
            self.reference = _default_reference(self.axis, self.values)
        self.reference = _coerce(self.axis, self.reference)
        if self.reference not in self.values:
            raise ValueError(f"reference {self.reference!r} is not among the grid values")

    def apply(self, config, value):
        if self.axis == "modality_subset":
            return config.replace(modalities=value)
        if self.axis == "num_layers":
            return config.replace(num_layers=value)
        if self.axis == "speaker_embedding":
            return config.replace(speaker_embedding=value == "with")
        return config.replace(fusion=value)


def _coerce(axis: str, value):
    if axis == "num_layers":
        return int(value)
    if axis == "speaker_embedding":
        if value in (True, "with", "w", "on", "true"):
            return "with"
        if value in (False, "without", "wo", "off", "false"):
            return "without"
        raise ValueError(f"speaker axis value must be 'with' or 'without', got {value!r}")
    if axis == "modality_subset":
        from .config import canonical_modalities

        return canonical_modalities(str(value))
    return str(value)


def _default_reference(axis: str, values: list) -> Any:
    pref = {"modality_subset": "avt", "num_layers": 4, "speaker_embedding": "with", "fusion": "mmgcn"}[axis]
    return pref if pref in values else values[0]


@dataclass
class AblationReport:
    axis: str
    reference: Any
    seeds: list[int]
    cells: dict[str, dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"axis": self.axis, "reference": str(self.reference), "seeds": self.seeds, "cells": self.cells}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'cell':<10} {'mean_f1':>8} {'std':>7} {'p_vs_ref':>9}"]
        for label, cell in self.cells.items():
            if cell.get("error"):
                lines.append(f"{label:<10} {'error':>8}  {cell['error']}")
                continue
            p = cell["p_vs_reference"]
            ptxt = "ref" if label == str(self.reference) else ("-" if p is None else f"{p:.4f}")
            std = float(np.std(cell["per_seed_f1"]))
            lines.append(f"{label:<10} {cell['mean_f1']:>8.4f} {std:>7.4f} {ptxt:>9}")
        return "\n".join(lines)


def _run_cell(args):
    from .training import evaluate, train

    train_set, test_set, config = args
    params, _, spec = train(train_set, config)
    return evaluate(test_set, params, spec)["weighted_f1"]


def run_ablation(
    corpus,
    grid: AblationGrid,
    seeds: Sequence[int],
    base_config,
    split_ratio: float = 0.8,
    split_seed: int = 0,
    workers: int = 1,
    test_corpus=None,
) -> AblationReport:
    """Train and test every (cell, seed); one shared split for all cells."""
    from .data import split_corpus

    if test_corpus is None:
        train_set, test_set = split_corpus(corpus, split_ratio, split_seed)
    else:
        train_set, test_set = corpus, test_corpus
    seeds = [int(s) for s in seeds]
    jobs = []
    errors: dict[str, str] = {}
    for value in grid.values:
        for s in seeds:
            try:
                cfg = grid.apply(base_config, value).replace(seed=s).validate()
            except ValueError as exc:
                errors[str(value)] = str(exc)
                cfg = None
            jobs.append((str(value), s, cfg))
    runnable = [(train_set, test_set, cfg) for _, _, cfg in jobs if cfg is not None]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, a) for a in runnable]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append(f.result())
                except Exception as exc:  # annotate the cell, keep the grid going
                    outcomes.append(exc)
    else:
        outcomes = []
        for a in runnable:
            try:
                outcomes.append(_run_cell(a))
            except Exception as exc:  # annotate the cell, keep the grid going
                outcomes.append(exc)
    it = iter(outcomes)
    scores: dict[str, list[float]] = {str(v): [] for v in grid.values}
    for label, _, cfg in jobs:
        if cfg is None:
            continue
        out = next(it)
        if isinstance(out, Exception):
            errors.setdefault(label, f"{type(out).__name__}: {out}")
        else:
            scores[label].append(float(out))

    report = AblationReport(grid.axis, grid.reference, seeds)
    ref = scores[str(grid.reference)]
    for value in grid.values:
        label = str(value)
        cell: dict[str, Any] = {"per_seed_f1": scores[label]}
        if label in errors:
            cell.update(mean_f1=None, p_vs_reference=None, t_vs_reference=None, error=errors[label])
        else:
            cell["mean_f1"] = float(np.mean(scores[label]))
            if label == str(grid.reference) or str(grid.reference) in errors or len(seeds) < 2:
                cell.update(p_vs_reference=None, t_vs_reference=None)
            else:
                tt = paired_t_test(scores[label], ref)
                cell.update(p_vs_reference=tt.pvalue, t_vs_reference=None if math.isnan(tt.statistic) else tt.statistic)
        report.cells[label] = cell
    return report
