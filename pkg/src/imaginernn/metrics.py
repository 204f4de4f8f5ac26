"""Top-k accuracy, Mean Top-5 Recall and per-anticipation-time reports.

Ranking ties are broken by ascending class id: class ``c`` outranks class
``d`` when ``score[c] > score[d]``, or when the scores are equal and ``c < d``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EvalError, MetricError
from .pipeline import fuse, predict_sweep

TARGETS = ("action", "noun", "verb")


def _ranks_of_labels(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Zero-based rank of each sample's label under the tie-breaking rule."""
    rows = np.arange(len(labels))
    own = scores[rows, labels][:, None]
    ids = np.arange(scores.shape[1])[None, :]
    ahead = (scores > own) | ((scores == own) & (ids < labels[:, None]))
    return ahead.sum(axis=1)


def _check(scores, labels, k: int) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise MetricError(f"need [n, classes] scores and n labels, got {scores.shape} and {labels.shape}")
    if k < 1 or k > scores.shape[1]:
        raise MetricError(f"k={k} outside [1, {scores.shape[1]}]")
    if len(labels) and (labels.min() < 0 or labels.max() >= scores.shape[1]):
        raise MetricError("label outside the class range")
    return scores, labels


def topk_accuracy(scores, labels, k: int) -> float:
    """Fraction of samples whose label is among the ``k`` best-ranked classes."""
    scores, labels = _check(scores, labels, k)
    if len(labels) == 0:
        raise MetricError("no samples")
    return float(np.mean(_ranks_of_labels(scores, labels) < k))


def mean_top5_recall(scores, labels, many_shot: Iterable[int], k: int = 5) -> float:
    """Per-class top-``k`` recall averaged over ``many_shot`` classes.

    Classes without any sample are skipped with a warning.
    """
    many_shot = sorted(set(int(c) for c in many_shot))
    if not many_shot:
        raise MetricError("many-shot class set is empty")
    scores, labels = _check(scores, labels, k)
    hits = _ranks_of_labels(scores, labels) < k
    recalls = []
    for c in many_shot:
        sel = labels == c
        if not sel.any():
            warnings.warn(f"many-shot class {c} has no samples; skipped", stacklevel=2)
            continue
        recalls.append(hits[sel].mean())
    if not recalls:
        raise MetricError("none of the many-shot classes has samples")
    return math.fsum(recalls) / len(recalls)


@dataclass(frozen=True)
class EvalRow:
    time: float
    target: str
    top1: float
    top5: float
    mt5r: float
    n: int


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (-r.time, r.target))

    def get(self, time: float, target: str) -> EvalRow:
        for r in self.rows:
            if abs(r.time - time) < 1e-9 and r.target == target:
                return r
        raise KeyError((time, target))

    def to_csv(self) -> str:
        lines = ["T,target,top1,top5,mt5r,n"]
        for r in self.rows:
            lines.append(f"{r.time:.6f},{r.target},{r.top1:.6f},{r.top5:.6f},{r.mt5r:.6f},{r.n}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def many_shot_classes(labels: Sequence[int], threshold: int = 10) -> set[int]:
    values, counts = np.unique(np.asarray(labels, dtype=np.int64), return_counts=True)
    return {int(v) for v, c in zip(values, counts) if c >= threshold}


def report_from_sweep(sweep, labels: Mapping[str, Sequence[int]],
                      many_shot: Mapping[str, set[int]]) -> EvalReport:
    """Score a :class:`~imaginernn.pipeline.PredictionSweep` against (action, verb, noun) labels.

    ``k`` is capped at the number of classes of a target, so top-5 over
    three verbs counts every sample as a hit.
    """
    n = sweep.n_samples
    if n == 0:
        raise EvalError("cannot evaluate an empty split")
    rows = []
    for target in TARGETS:
        y = np.asarray(labels[target], dtype=np.int64)
        classes = sweep.target(target).shape[-1]
        k5 = min(5, classes)
        shots = many_shot.get(target, set())
        for i, t in enumerate(sweep.times):
            scores = sweep.target(target)[i]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    mt5r = mean_top5_recall(scores, y, shots, k=k5)
                except MetricError:
                    # no many-shot class with validation samples
                    mt5r = float("nan")
            rows.append(EvalRow(float(t), target, topk_accuracy(scores, y, 1),
                                topk_accuracy(scores, y, k5), mt5r, n))
    return EvalReport(rows)


def sample_labels(samples) -> dict[str, np.ndarray]:
    return {
        "verb": np.array([s.labels[0] for s in samples], dtype=np.int64),
        "noun": np.array([s.labels[1] for s in samples], dtype=np.int64),
        "action": np.array([s.labels[2] for s in samples], dtype=np.int64),
    }


def evaluate(models, dataset, split: str, weights: Sequence[float] | None = None,
             many_shot_threshold: int = 10) -> EvalReport:
    """Predict with one model per modality, fuse late, and score every anticipation time.

    ``models`` is a sequence of ``(ModelParams, PipelineConfig, modality)``.
    Many-shot classes are those with at least ``many_shot_threshold``
    training samples.
    """
    if not models:
        raise EvalError("no models to evaluate")
    sweeps, samples = [], None
    for params, cfg, modality in models:
        samples = dataset.samples(split, modality, cfg.timeline, with_future=False)
        if not samples:
            raise EvalError(f"split {split!r} has no samples")
        sweeps.append(predict_sweep(params, samples, modality, cfg, dataset.vocab))
    sweep = fuse(sweeps, weights)
    train = [s for s in dataset.manifest.segments if s.split == "train"]
    vocab = dataset.vocab
    train_labels = {
        "action": [s.action_id for s in train],
        "verb": [vocab.actions[s.action_id][0] for s in train],
        "noun": [vocab.actions[s.action_id][1] for s in train],
    }
    shots = {t: many_shot_classes(train_labels[t], many_shot_threshold) for t in TARGETS}
    return report_from_sweep(sweep, sample_labels(samples), shots)
