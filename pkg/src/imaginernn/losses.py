"""Contrastive (NCE), regression and classification objectives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, LabelError, ShapeError
from .samples import AnticipationSample

LOSS_MODES = ("contrastive", "l2", "contrastive+l2")


@dataclass(frozen=True)
class NceConfig:
    temperature: float = 0.2

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


@dataclass
class CandidateSet:
    positive: Tensor
    negatives: list[Tensor]
    tags: list[str]  # "hard" (same video, other time) or "easy" (other video)

    def __post_init__(self):
        if not self.negatives:
            raise ConfigError("a candidate set needs at least one negative")
        if len(self.tags) != len(self.negatives):
            raise ContractError("every negative needs a provenance tag")

    def __len__(self) -> int:
        return 1 + len(self.negatives)


@dataclass
class LossBreakdown:
    contrastive: float
    classification: float
    total: float
    objective: Tensor | None = None  # scalar to back-propagate


def _only_modality(sample: AnticipationSample, modality: str | None) -> str:
    if modality is not None:
        return modality
    if sample.future_truth is None or len(sample.future_truth) != 1:
        raise ContractError("pass modality= when samples carry several modalities")
    return next(iter(sample.future_truth))


def build_candidates(batch: Sequence[AnticipationSample], sample_index: int, time_index: int,
                     modality: str | None = None) -> CandidateSet:
    """Positive frame plus hard (same sample) and easy (other samples) distractors.

    Frames sharing the positive's (video, frame) key are left out so that
    overlapping windows of the same video never offer the answer as a negative.
    """
    if not batch:
        raise ConfigError("empty batch")
    target = batch[sample_index]
    modality = _only_modality(target, modality)
    if target.future_truth is None:
        raise ContractError("candidates need ground-truth future frames")
    frames = target.future_truth[modality]
    if not 0 <= time_index < len(frames):
        raise ContractError(f"time index {time_index} outside window of {len(frames)} frames")
    key = (target.video_id, int(target.frame_index[time_index]))
    negatives, tags = [], []
    for s_idx, sample in enumerate(batch):
        rows = sample.future_truth[modality]
        for t_idx, row in enumerate(rows):
            if s_idx == sample_index and t_idx == time_index:
                continue
            if (sample.video_id, int(sample.frame_index[t_idx])) == key:
                continue
            negatives.append(Tensor(row))
            tags.append("hard" if s_idx == sample_index else "easy")
    if not negatives:
        raise ConfigError("no distractors available: need more frames or more samples per batch")
    return CandidateSet(Tensor(frames[time_index]), negatives, tags)


def nce_loss(f_hat: Tensor, candidates: CandidateSet, cfg: NceConfig = NceConfig()) -> Tensor:
    """Cross-entropy of picking the positive among cosine similarities / temperature."""
    d = f_hat.shape[-1]
    if any(v.shape != (d,) for v in [candidates.positive, *candidates.negatives]):
        raise ShapeError("all candidates must share the prediction's dimension")
    bank = ad.l2_normalize(ad.stack([candidates.positive, *candidates.negatives]))
    query = ad.reshape(ad.l2_normalize(f_hat), (d, 1))
    logits = ad.scale(ad.reshape(ad.matmul(bank, query), (len(candidates),)), 1.0 / cfg.temperature)
    return ad.softmax_cross_entropy(logits, 0)


def batched_nce_loss(predicted: Tensor, truth: Tensor, keys: Sequence[tuple], cfg: NceConfig = NceConfig()) -> Tensor:
    """Mean NCE loss over ``N`` predictions scored against all ``N`` true frames.

    Row ``i`` takes ``truth[i]`` as its positive and every other row of
    ``truth`` as a distractor, except rows whose key equals ``keys[i]``. With
    rows ordered by (sample, time) this is exactly the union of hard and easy
    negatives that :func:`build_candidates` produces for each prediction.
    """
    if predicted.shape != truth.shape or predicted.data.ndim != 2:
        raise ShapeError(f"prediction {predicted.shape} vs truth {truth.shape}")
    n = predicted.shape[0]
    if len(keys) != n:
        raise ContractError("one key per row required")
    codes = {k: i for i, k in enumerate(dict.fromkeys(keys))}
    ids = np.array([codes[k] for k in keys])
    mask = ids[:, None] == ids[None, :]
    np.fill_diagonal(mask, False)
    if np.any(mask.sum(axis=1) >= n - 1):
        raise ConfigError("no distractors available: need more frames or more samples per batch")
    p = ad.l2_normalize(predicted)
    g = ad.l2_normalize(truth)
    logits = ad.scale(ad.matmul(p, ad.transpose(g)), 1.0 / cfg.temperature)
    return ad.mean(ad.softmax_cross_entropy(logits, np.arange(n), mask))


def l2_loss(f_hat: Tensor, f_true: Tensor) -> Tensor:
    """Mean squared error over all entries."""
    if f_hat.shape != f_true.shape:
        raise ShapeError(f"l2 loss: shape mismatch {f_hat.shape} vs {f_true.shape}")
    diff = ad.sub(f_hat, f_true)
    return ad.mean(ad.mul(diff, diff))


def classification_loss(logits: Tensor, label) -> Tensor:
    """``-log softmax(logits)[label]``, averaged over rows for batched logits."""
    labels = np.atleast_1d(np.asarray(label))
    num = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= num):
        raise LabelError(f"label(s) {labels.tolist()} outside [0, {num})")
    return ad.mean(ad.softmax_cross_entropy(logits, labels))


def total_loss(classification: Sequence[Tensor], contrastive: Sequence[Tensor] = (),
               regression: Sequence[Tensor] = (), mode: str = "contrastive") -> LossBreakdown:
    """Combine per-step imagination terms and per-point classification terms.

    The imagination term is the mean of the NCE terms, of the l2 terms, or
    the sum of both means (``contrastive+l2``); the classification term is
    the mean over prediction points.
    """
    if mode not in LOSS_MODES:
        raise ConfigError(f"loss mode must be one of {LOSS_MODES}, got {mode!r}")
    if not classification:
        raise ContractError("at least one classification term is required")
    parts = []
    if mode in ("contrastive", "contrastive+l2"):
        if not contrastive:
            raise ContractError("contrastive mode needs at least one imagined step")
        parts.append(_mean(contrastive))
    if mode in ("l2", "contrastive+l2"):
        if not regression:
            raise ContractError("l2 mode needs at least one imagined step")
        parts.append(_mean(regression))
    l_c = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
    l_f = _mean(classification)
    objective = ad.add(l_c, l_f)
    c, f = l_c.item(), l_f.item()
    return LossBreakdown(c, f, c + f, objective)


def _mean(terms: Sequence[Tensor]) -> Tensor:
    if len(terms) == 1:
        return terms[0]
    return ad.scale(ad.sum(ad.stack(list(terms))), 1.0 / len(terms))
