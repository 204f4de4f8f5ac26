"""ImagineRNN: step-wise prediction of future frame features.

In residual mode each step predicts the change to the previous feature,
so an ``n``-step autoregressive rollout from ``f_t`` yields
``f_t + sum_k phi(h_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from . import autodiff as ad
from .autodiff import Tensor
from .cells import CellParams, CellState, LinearParams, cell_step, linear_forward
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ImaginationConfig:
    residual: bool = True
    steps: int = 7
    teacher_forcing: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"imagination needs at least one step, got {self.steps}")


@dataclass
class ImaginedTrajectory:
    features: list[Tensor] = field(default_factory=list)
    states: list[CellState] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)


def imagine_step(cell: CellParams, phi: LinearParams, f_prev: Tensor, state: CellState,
                 residual: bool) -> tuple[Tensor, CellState]:
    if f_prev.shape[-1] != phi.d_out:
        raise ShapeError(f"feature width {f_prev.shape[-1]} does not match phi output {phi.d_out}")
    new_state = cell_step(cell, f_prev, state)
    f_hat = linear_forward(phi, new_state.h)
    if residual:
        f_hat = ad.add(f_hat, f_prev)
    return f_hat, new_state


def rollout(cell: CellParams, phi: LinearParams, f_last_observed: Tensor, state: CellState,
            n: int, residual: bool, teacher: Sequence[Tensor] | None = None) -> ImaginedTrajectory:
    """Imagine ``n`` future features, feeding each prediction back as the next input.

    With ``teacher`` given, step ``k > 1`` consumes ``teacher[k - 2]`` (the true
    feature ``f_{t+k-1}``) instead of its own previous prediction.
    """
    if n < 1:
        raise ConfigError(f"rollout needs n >= 1, got {n}")
    if teacher is not None and len(teacher) < n - 1:
        raise ShapeError(f"teacher forcing needs {n - 1} frames, got {len(teacher)}")
    traj = ImaginedTrajectory()
    f_in = f_last_observed
    for k in range(n):
        f_hat, state = imagine_step(cell, phi, f_in, state, residual)
        traj.features.append(f_hat)
        traj.states.append(state)
        f_in = f_hat if teacher is None or k == n - 1 else teacher[k]
    return traj
