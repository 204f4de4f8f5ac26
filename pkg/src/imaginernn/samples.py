"""Timeline arithmetic, action vocabulary and anticipation samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, ContractError

_INTEGRAL_TOL = 1e-9


def _steps(seconds: float, alpha: float, what: str) -> int:
    ratio = seconds / alpha
    k = round(ratio)
    if abs(ratio - k) > _INTEGRAL_TOL:
        raise ConfigError(f"{what}={seconds:g}s is not a whole number of {alpha:g}s steps")
    return k


@dataclass(frozen=True)
class TimelineConfig:
    """Observation and anticipation window, in seconds relative to the action start.

    The encoder observes ``[-window, -encoder_end_offset]``; the decoder then
    runs one step per ``alpha`` and emits one prediction per anticipation time.
    """

    alpha: float = 0.25
    window: float = 3.5
    encoder_end_offset: float = 2.0
    anticipation_times: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.alpha <= 0 or self.window <= 0:
            raise ConfigError("alpha and window must be positive")
        if not 0 < self.encoder_end_offset <= self.window:
            raise ConfigError(
                f"encoder_end_offset must lie in (0, window], got {self.encoder_end_offset:g}")
        _steps(self.window, self.alpha, "window")
        end = _steps(self.encoder_end_offset, self.alpha, "encoder_end_offset")
        if self.anticipation_times is None:
            times = tuple((end - j) * self.alpha for j in range(end))
            object.__setattr__(self, "anticipation_times", times)
        else:
            times = tuple(float(t) for t in self.anticipation_times)
            if not times:
                raise ConfigError("anticipation_times must not be empty")
            for t in times:
                if t <= 0 or t > self.encoder_end_offset + _INTEGRAL_TOL:
                    raise ConfigError(f"anticipation time {t:g}s outside (0, {self.encoder_end_offset:g}]")
                _steps(t, self.alpha, "anticipation time")
            if list(times) != sorted(times, reverse=True) or len(set(times)) != len(times):
                raise ConfigError("anticipation_times must be strictly descending")
            object.__setattr__(self, "anticipation_times", times)


@dataclass(frozen=True)
class Timeline:
    encoder_steps: int
    anticipation_steps: int
    step_times: tuple[float, ...]
    alpha: float

    @property
    def observed_times(self) -> tuple[float, ...]:
        return self.step_times[:self.encoder_steps]

    @property
    def future_times(self) -> tuple[float, ...]:
        """Times of the frames the imagination should reproduce."""
        return self.step_times[self.encoder_steps:]

    @property
    def imagined_steps(self) -> int:
        return self.anticipation_steps - 1

    def decoder_step_time(self, j: int) -> float:
        """Anticipation time of the prediction emitted after decoder step ``j`` (1-based)."""
        return (self.anticipation_steps - j + 1) * self.alpha

    def decoder_step_for(self, t: float) -> int:
        return self.anticipation_steps - round(t / self.alpha) + 1


def timeline(cfg: TimelineConfig) -> Timeline:
    """Step counts and the ``tau_s``-relative times of every frame a sample uses.

    ``step_times`` lists the observed frames followed by the future frames
    up to one step before the action starts.
    """
    total = _steps(cfg.window, cfg.alpha, "window")
    end = _steps(cfg.encoder_end_offset, cfg.alpha, "encoder_end_offset")
    encoder_steps = total - end + 1
    times = tuple(-(total - k) * cfg.alpha for k in range(total))
    return Timeline(encoder_steps, end, times, cfg.alpha)


@dataclass
class ActionVocab:
    verbs: dict[int, str]
    nouns: dict[int, str]
    actions: dict[int, tuple[int, int]]

    def __post_init__(self):
        pairs = list(self.actions.values())
        if len(set(pairs)) != len(pairs):
            raise ContractError("action map must be injective over (verb, noun) pairs")
        for a, (v, n) in self.actions.items():
            if v not in self.verbs or n not in self.nouns:
                raise ContractError(f"action {a} refers to unknown verb {v} or noun {n}")
        for name, ids in (("verb", self.verbs), ("noun", self.nouns), ("action", self.actions)):
            if sorted(ids) != list(range(len(ids))):
                raise ContractError(f"{name} ids must be 0..{len(ids) - 1}")

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_verbs(self) -> int:
        return len(self.verbs)

    @property
    def num_nouns(self) -> int:
        return len(self.nouns)

    def verb_of(self) -> np.ndarray:
        return np.array([self.actions[a][0] for a in range(self.num_actions)], dtype=np.int64)

    def noun_of(self) -> np.ndarray:
        return np.array([self.actions[a][1] for a in range(self.num_actions)], dtype=np.int64)

    @classmethod
    def full_grid(cls, num_verbs: int, num_nouns: int) -> "ActionVocab":
        """Every (verb, noun) pair as an action, verb-major."""
        verbs = {v: f"verb{v}" for v in range(num_verbs)}
        nouns = {n: f"noun{n}" for n in range(num_nouns)}
        actions = {v * num_nouns + n: (v, n) for v in range(num_verbs) for n in range(num_nouns)}
        return cls(verbs, nouns, actions)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ActionVocab) and self.verbs == other.verbs
                and self.nouns == other.nouns and self.actions == other.actions)


@dataclass
class AnticipationSample:
    """One labelled instance: observed frames, optional future frames, labels.

    ``observed`` and ``future_truth`` map modality name to an array with one
    row per frame. ``frame_index`` holds the absolute frame index (time / alpha)
    of each future row so distractors can exclude duplicates of the positive.
    """

    video_id: str
    action_start: float
    observed: Mapping[str, np.ndarray]
    labels: tuple[int, int, int]
    future_truth: Mapping[str, np.ndarray] | None = None
    frame_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def action(self) -> int:
        return self.labels[2]

    def without_future(self) -> "AnticipationSample":
        return AnticipationSample(self.video_id, self.action_start, self.observed, self.labels,
                                  None, self.frame_index)
