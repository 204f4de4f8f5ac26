"""Encoder -> ImagineRNN -> decoder -> classifier, plus marginalisation and fusion.

All samples of a batch share one timeline: the encoder reads the observed
frames, both the ImagineRNN and the decoder start from the encoder's final
state, and the decoder consumes the last observed frame followed by the
imagined features. After decoder step ``j`` the classifier emits the
prediction for anticipation time ``encoder_end_offset - (j - 1) * alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .cells import CellParams, CellState, LinearParams, cell_step, init_cell, init_linear, linear_forward
from .errors import ConfigError, ContractError, TrainingDataError
from .imagination import rollout
from .losses import LOSS_MODES, LossBreakdown, NceConfig, batched_nce_loss, classification_loss, l2_loss, total_loss
from .samples import ActionVocab, AnticipationSample, TimelineConfig, timeline

TRAIN_POINTS = ("all", "selection")


@dataclass(frozen=True)
class PipelineConfig:
    timeline: TimelineConfig = field(default_factory=TimelineConfig)
    residual: bool = True
    loss_mode: str = "contrastive"
    intention: bool = True
    teacher_forcing: bool = False
    nce: NceConfig = field(default_factory=NceConfig)
    # "all": classification loss at every prediction point; "selection": only at selection_time
    train_points: str = "all"
    selection_time: float = 1.0

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.train_points not in TRAIN_POINTS:
            raise ConfigError(f"train_points must be one of {TRAIN_POINTS}")
        if self.train_points == "selection" and not any(
                abs(t - self.selection_time) < 1e-9 for t in self.timeline.anticipation_times):
            raise ConfigError(f"selection time {self.selection_time:g}s is not an anticipation time")


@dataclass
class ModelParams:
    encoder: CellParams
    imagine: CellParams
    decoder: CellParams
    phi: LinearParams
    classifier: LinearParams

    @classmethod
    def init(cls, d_feat: int, d_h: int, num_actions: int, cell_kind: str = "lstm", seed: int = 0,
             forget_bias: float = 1.0, phi_activation: str | None = None) -> "ModelParams":
        rng = np.random.default_rng(seed)
        return cls(
            init_cell(cell_kind, d_feat, d_h, rng, forget_bias, "encoder"),
            init_cell(cell_kind, d_feat, d_h, rng, forget_bias, "imagine"),
            init_cell(cell_kind, d_feat, d_h, rng, forget_bias, "decoder"),
            init_linear(d_h, d_feat, rng, phi_activation, "phi"),
            init_linear(d_h, num_actions, rng, None, "classifier"),
        )

    @property
    def cell_kind(self) -> str:
        return self.encoder.kind

    @property
    def d_feat(self) -> int:
        return self.encoder.d_in

    @property
    def d_h(self) -> int:
        return self.encoder.d_h

    @property
    def num_actions(self) -> int:
        return self.classifier.d_out

    def imagination_parameters(self) -> list[Parameter]:
        return self.imagine.parameters() + self.phi.parameters()

    def parameters(self) -> list[Parameter]:
        return (self.encoder.parameters() + self.imagine.parameters() + self.decoder.parameters()
                + self.phi.parameters() + self.classifier.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state or np.shape(state[p.name]) != p.shape:
                raise ContractError(f"state is missing or misshapes parameter {p.name}")
            p.data[...] = state[p.name]
            p.velocity[...] = 0.0
            p.zero_grad()


@dataclass
class PredictionSweep:
    """Per-anticipation-time scores for a batch of samples.

    ``action`` has shape ``[len(times), n_samples, num_actions]``; ``verb`` and
    ``noun`` are its marginals.
    """

    times: tuple[float, ...]
    action: np.ndarray
    verb: np.ndarray
    noun: np.ndarray
    vocab: ActionVocab

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_samples(self) -> int:
        return self.action.shape[1]

    def at(self, t: float) -> int:
        for i, ti in enumerate(self.times):
            if abs(ti - t) < 1e-9:
                return i
        raise ContractError(f"anticipation time {t:g}s not in sweep {self.times}")

    def target(self, name: str) -> np.ndarray:
        return {"action": self.action, "verb": self.verb, "noun": self.noun}[name]

    @classmethod
    def from_actions(cls, times, action: np.ndarray, vocab: ActionVocab) -> "PredictionSweep":
        verb, noun = marginalize(action, vocab)
        return cls(tuple(times), action, verb, noun, vocab)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _stack_frames(samples: Sequence[AnticipationSample], modality: str, future: bool) -> np.ndarray:
    if future:
        if any(s.future_truth is None for s in samples):
            raise TrainingDataError("training needs ground-truth future frames for every sample")
        return np.stack([s.future_truth[modality] for s in samples])
    return np.stack([s.observed[modality] for s in samples])


def forward_batch(params: ModelParams, samples: Sequence[AnticipationSample], modality: str,
                  cfg: PipelineConfig, vocab: ActionVocab, train: bool = True
                  ) -> tuple[LossBreakdown | None, PredictionSweep]:
    """Run the full model on a batch; with ``train`` also build the loss graph."""
    if not samples:
        raise ContractError("empty batch")
    tl = timeline(cfg.timeline)
    observed = _stack_frames(samples, modality, future=False)
    if observed.shape[1] != tl.encoder_steps or observed.shape[2] != params.d_feat:
        raise ContractError(f"observed frames {observed.shape[1:]} do not match "
                            f"{tl.encoder_steps} steps of width {params.d_feat}")
    batch = len(samples)
    n_imag = tl.imagined_steps
    truth = None
    if train:
        truth = _stack_frames(samples, modality, future=True)
        if truth.shape[1] != n_imag:
            raise TrainingDataError(f"expected {n_imag} future frames, got {truth.shape[1]}")

    state = CellState.zeros(params.cell_kind, params.d_h, batch)
    for t in range(tl.encoder_steps):
        state = cell_step(params.encoder, Tensor(observed[:, t]), state)
    last = Tensor(observed[:, -1])

    imagined: list[Tensor] = []
    if n_imag >= 1:
        teacher = None
        if train and cfg.teacher_forcing:
            teacher = [Tensor(truth[:, k]) for k in range(n_imag)]
        imagined = rollout(params.imagine, params.phi, last, state, n_imag, cfg.residual, teacher).features

    # without intention the classification loss must not reach the ImagineRNN
    feed = imagined if cfg.intention else [ad.detach(f) for f in imagined]
    wanted = {tl.decoder_step_for(t): t for t in cfg.timeline.anticipation_times}
    logits: dict[float, Tensor] = {}
    dec = state
    for j, x in enumerate([last, *feed][:max(wanted)], start=1):
        dec = cell_step(params.decoder, x, dec)
        if j in wanted:
            logits[wanted[j]] = linear_forward(params.classifier, dec.h)

    times = cfg.timeline.anticipation_times
    probs = np.stack([_softmax(logits[t].data) for t in times])
    sweep = PredictionSweep.from_actions(times, probs, vocab)
    if not train:
        return None, sweep

    labels = np.array([s.action for s in samples])
    points = times if cfg.train_points == "all" else (cfg.selection_time,)
    cls_terms = [classification_loss(logits[_match(times, t)], labels) for t in points]
    contrastive, regression = [], []
    if n_imag >= 1:
        pred = ad.concat(imagined, axis=0)
        true = Tensor(np.concatenate([truth[:, k] for k in range(n_imag)], axis=0))
        if cfg.loss_mode in ("contrastive", "contrastive+l2"):
            keys = [(s.video_id, int(s.frame_index[k])) for k in range(n_imag) for s in samples]
            contrastive.append(batched_nce_loss(pred, true, keys, cfg.nce))
        if cfg.loss_mode in ("l2", "contrastive+l2"):
            regression.append(l2_loss(pred, true))
    return total_loss(cls_terms, contrastive, regression, cfg.loss_mode), sweep


def _match(times: Sequence[float], t: float) -> float:
    for ti in times:
        if abs(ti - t) < 1e-9:
            return ti
    raise ConfigError(f"time {t:g}s is not an anticipation time")


def forward_train(params: ModelParams, sample: AnticipationSample, modality: str,
                  cfg: PipelineConfig, vocab: ActionVocab) -> tuple[LossBreakdown, PredictionSweep]:
    if sample.future_truth is None:
        raise TrainingDataError(f"sample {sample.video_id}@{sample.action_start:g}s has no future frames")
    return forward_batch(params, [sample], modality, cfg, vocab, train=True)


def predict_sweep(params: ModelParams, samples: Sequence[AnticipationSample], modality: str,
                  cfg: PipelineConfig, vocab: ActionVocab, batch_size: int = 256) -> PredictionSweep:
    """Action, verb and noun probabilities at every anticipation time."""
    if isinstance(samples, AnticipationSample):
        samples = [samples]
    parts = []
    with ad.no_grad():
        for start in range(0, len(samples), batch_size):
            _, sweep = forward_batch(params, samples[start:start + batch_size], modality, cfg, vocab,
                                     train=False)
            parts.append(sweep.action)
    return PredictionSweep.from_actions(cfg.timeline.anticipation_times, np.concatenate(parts, axis=1), vocab)


def marginalize(action_probs: np.ndarray, vocab: ActionVocab) -> tuple[np.ndarray, np.ndarray]:
    """Sum action probabilities into verb and noun distributions (last axis)."""
    action_probs = np.asarray(action_probs, dtype=np.float64)
    if action_probs.shape[-1] != vocab.num_actions:
        raise ContractError(f"expected {vocab.num_actions} action scores, got {action_probs.shape[-1]}")
    if np.any(np.abs(action_probs.sum(axis=-1) - 1.0) > 1e-6):
        raise ContractError("action probabilities must sum to 1")
    to_verb = np.zeros((vocab.num_actions, vocab.num_verbs))
    to_noun = np.zeros((vocab.num_actions, vocab.num_nouns))
    to_verb[np.arange(vocab.num_actions), vocab.verb_of()] = 1.0
    to_noun[np.arange(vocab.num_actions), vocab.noun_of()] = 1.0
    return action_probs @ to_verb, action_probs @ to_noun


def fuse(sweeps: Sequence[PredictionSweep], weights: Sequence[float] | None = None) -> PredictionSweep:
    """Weighted average of per-modality action probabilities."""
    if not sweeps:
        raise ContractError("nothing to fuse")
    if weights is None:
        weights = [1.0] * len(sweeps)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(sweeps),) or np.any(w < 0) or not w.sum() > 0:
        raise ContractError("need one non-negative weight per sweep with a positive sum")
    first = sweeps[0]
    for s in sweeps[1:]:
        if s.vocab != first.vocab or len(s.times) != len(first.times) or not np.allclose(s.times, first.times):
            raise ContractError("sweeps disagree on vocabulary or anticipation times")
        if s.action.shape != first.action.shape:
            raise ContractError("sweeps cover different numbers of samples")
    w = w / w.sum()
    action = sum(wi * s.action for wi, s in zip(w, sweeps) if wi > 0)
    mass = action.sum(axis=-1, keepdims=True)
    drift = np.abs(mass - 1.0) > 1e-12
    if np.any(drift):
        action = np.where(drift, action / mass, action)
    return PredictionSweep.from_actions(first.times, action, first.vocab)
