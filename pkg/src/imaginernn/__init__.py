"""Egocentric action anticipation by imagining future frame features.

An LSTM/GRU encoder summarises observed feature frames, an ImagineRNN
rolls out future features (optionally as residual increments) trained with
a temperature-scaled contrastive loss, and a decoder classifies the next
action at every anticipation time. Gradients come from the small
reverse-mode engine in :mod:`imaginernn.autodiff`.
"""

from .autodiff import Parameter, Tensor, backward, sgd_momentum_step
from .cells import CellParams, CellState, LinearParams, cell_step, linear_forward
from .imagination import ImaginationConfig, ImaginedTrajectory, imagine_step, rollout
from .losses import (CandidateSet, LossBreakdown, NceConfig, build_candidates, classification_loss,
                     l2_loss, nce_loss, total_loss)
from .metrics import EvalReport, evaluate, mean_top5_recall, topk_accuracy
from .pipeline import (ModelParams, PipelineConfig, PredictionSweep, forward_batch, forward_train, fuse,
                       marginalize, predict_sweep)
from .samples import ActionVocab, AnticipationSample, TimelineConfig, timeline
from .world import WorldConfig, gen_dataset, load_dataset

__version__ = "0.1.0"

__all__ = [
    "ActionVocab", "AnticipationSample", "CandidateSet", "CellParams", "CellState", "EvalReport",
    "ImaginationConfig", "ImaginedTrajectory", "LinearParams", "LossBreakdown", "ModelParams",
    "NceConfig", "Parameter", "PipelineConfig", "PredictionSweep", "Tensor", "TimelineConfig",
    "WorldConfig", "backward", "build_candidates", "cell_step", "classification_loss", "evaluate",
    "forward_batch", "forward_train", "fuse", "gen_dataset", "imagine_step", "l2_loss", "linear_forward",
    "load_dataset", "marginalize", "mean_top5_recall", "nce_loss", "predict_sweep", "rollout",
    "sgd_momentum_step", "timeline", "topk_accuracy", "total_loss",
]
