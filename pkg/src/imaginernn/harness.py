"""Training with early stopping, checkpoints and the ablation grid."""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .config import convert, parse_bool, parse_floats, parse_kv, parse_strs, read_kv
from .errors import ConfigError, ContractError, DivergenceError, ImagineError
from .losses import LOSS_MODES, NceConfig
from .metrics import EvalReport, evaluate, topk_accuracy
from .pipeline import ModelParams, PipelineConfig, forward_batch, predict_sweep
from .samples import TimelineConfig
from .world import Dataset, load_dataset

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "imaginernn-checkpoint/1"
LOG_HEADER = "epoch,L_c,L_f,L,val_top5@1s"


def _optional_str(value: str) -> str | None:
    return None if value.strip().lower() in ("", "none") else value.strip()


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run depends on.

    Defaults are sized for a laptop CPU. The full-size preset
    (``preset = paper``) uses ``hidden=1024`` and ``batch_size=128``.
    """

    data: str = ""
    modality: str | None = None  # None: first modality of the dataset
    hidden: int = 64
    cell: str = "lstm"
    loss_mode: str = "contrastive"
    residual: bool = True
    intention: bool = True
    teacher_forcing: bool = False
    train_points: str = "all"
    selection_time: float = 1.0
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 15
    temperature: float = 0.2
    seed: int = 0
    alpha: float = 0.25
    window: float = 3.5
    encoder_end_offset: float = 2.0
    anticipation_times: tuple[float, ...] | None = None
    forget_bias: float = 1.0
    phi_activation: str | None = None
    many_shot_threshold: int = 10
    # ablation axes
    grid_loss_mode: tuple[str, ...] = ("contrastive", "l2")
    grid_residual: tuple[bool, ...] = (True, False)
    grid_intention: tuple[bool, ...] = (True, False)
    grid_cell: tuple[str, ...] = ("lstm", "gru")

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.hidden < 1 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("hidden, batch_size and max_epochs must be positive; patience non-negative")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("lr must be >= 0 and momentum in [0, 1)")

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        return cls(**{"hidden": 1024, "batch_size": 128, **overrides})

    def timeline(self) -> TimelineConfig:
        return TimelineConfig(self.alpha, self.window, self.encoder_end_offset, self.anticipation_times)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.timeline(), self.residual, self.loss_mode, self.intention,
                              self.teacher_forcing, NceConfig(self.temperature), self.train_points,
                              self.selection_time)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(_fmt_value(v) for v in value)
            out[f.name] = "none" if value is None else _fmt_value(value)
        return out

    def hash(self) -> str:
        """Digest of every field except the dataset location."""
        kv = self.to_kv()
        kv.pop("data")
        text = "\n".join(f"{k} = {v}" for k, v in sorted(kv.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_RUN_KEYS = {
    "data": str, "modality": _optional_str, "hidden": int, "cell": str, "loss_mode": str,
    "residual": parse_bool, "intention": parse_bool, "teacher_forcing": parse_bool,
    "train_points": str, "selection_time": float, "lr": float, "momentum": float,
    "batch_size": int, "max_epochs": int, "patience": int, "temperature": float, "seed": int,
    "alpha": float, "window": float, "encoder_end_offset": float,
    "anticipation_times": lambda v: None if v.strip().lower() == "none" else parse_floats(v),
    "forget_bias": float, "phi_activation": _optional_str, "many_shot_threshold": int,
    "grid_loss_mode": parse_strs,
    "grid_residual": lambda v: tuple(parse_bool(x) for x in parse_strs(v)),
    "grid_intention": lambda v: tuple(parse_bool(x) for x in parse_strs(v)),
    "grid_cell": parse_strs,
    "preset": str,
}


def run_config_from_kv(raw: dict[str, str], source: str = "<config>", **overrides) -> RunConfig:
    values = convert(raw, _RUN_KEYS, source)
    preset = values.pop("preset", "desk")
    if preset == "paper":
        base = {"hidden": 1024, "batch_size": 128}
    elif preset == "desk":
        base = {}
    else:
        raise ConfigError(f"{source}: preset must be desk or paper, got {preset!r}")
    return RunConfig(**{**base, **values, **{k: v for k, v in overrides.items() if v is not None}})


def read_run_config(path: str | Path | None, **overrides) -> RunConfig:
    raw = read_kv(path) if path else {}
    return run_config_from_kv(raw, str(path or "<defaults>"), **overrides)


# -- checkpoints -----------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int
    val_top5: float
    config: RunConfig
    modality: str
    log_rows: list[str] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return self.config.hash()

    def save(self, path: str | Path) -> None:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "modality": self.modality,
            "epoch": self.epoch,
            "val_top5_at_selection": self.val_top5,
            "config_hash": self.config_hash,
            "config": self.config.to_kv(),
            "num_actions": self.params.num_actions,
            "d_feat": self.params.d_feat,
            "params": {name: {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
                       for name, arr in self.params.state_dict().items()},
        }
        Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ContractError(f"cannot read checkpoint {path}: {exc}") from exc
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        cfg = run_config_from_kv(doc["config"], str(path))
        if cfg.hash() != doc["config_hash"]:
            raise ContractError(f"{path}: configuration hash mismatch")
        params = ModelParams.init(doc["d_feat"], cfg.hidden, doc["num_actions"], cfg.cell,
                                  forget_bias=cfg.forget_bias, phi_activation=cfg.phi_activation)
        params.load_state_dict({k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                                for k, v in doc["params"].items()})
        return cls(params, doc["epoch"], doc["val_top5_at_selection"], cfg, doc["modality"])


# -- training --------------------------------------------------------------------


def _selection_scores(params: ModelParams, samples, modality: str, cfg: PipelineConfig, vocab,
                      t: float) -> tuple[float, float]:
    sweep = predict_sweep(params, samples, modality, cfg, vocab)
    scores = sweep.action[sweep.at(t)]
    labels = np.array([s.action for s in samples])
    k5 = min(5, scores.shape[1])
    return topk_accuracy(scores, labels, k5), topk_accuracy(scores, labels, 1)


def train(cfg: RunConfig, dataset: Dataset | None = None, log_path: str | Path | None = None) -> Checkpoint:
    """Mini-batch SGD with momentum; keep the epoch with the best validation top-5 at ``selection_time``.

    Ties on top-5 are broken by validation top-1. Training stops after
    ``patience`` consecutive epochs without improvement.
    """
    ds = dataset if dataset is not None else load_dataset(cfg.data, window=cfg.window)
    modality = cfg.modality or ds.manifest.modalities[0]
    pcfg = cfg.pipeline()
    if not any(abs(t - cfg.selection_time) < 1e-9 for t in pcfg.timeline.anticipation_times):
        raise ConfigError(f"selection time {cfg.selection_time:g}s is not an anticipation time")
    vocab = ds.vocab
    train_set = ds.samples("train", modality, pcfg.timeline)
    val_set = ds.samples("val", modality, pcfg.timeline, with_future=False)
    if not train_set or not val_set:
        raise ConfigError("training needs non-empty train and val splits")
    params = ModelParams.init(ds.manifest.dims[modality], cfg.hidden, vocab.num_actions, cfg.cell,
                              seed=cfg.seed, forget_bias=cfg.forget_bias, phi_activation=cfg.phi_activation)
    plist = params.parameters()
    rows = [LOG_HEADER]
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log_file:
            log_file.write(LOG_HEADER + "\n")
        best_key, best_state, best_epoch, stale = None, None, 0, 0
        for epoch in range(1, cfg.max_epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
            sums = np.zeros(3)
            batches = 0
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
                losses, _ = forward_batch(params, batch, modality, pcfg, vocab, train=True)
                if not np.isfinite(losses.total):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
                ad.backward(losses.objective)
                try:
                    ad.sgd_momentum_step(plist, cfg.lr, cfg.momentum)
                except FloatingPointError as exc:
                    raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}") from exc
                sums += (losses.contrastive, losses.classification, losses.total)
                batches += 1
            top5, top1 = _selection_scores(params, val_set, modality, pcfg, vocab, cfg.selection_time)
            l_c, l_f, l_tot = sums / batches
            row = f"{epoch},{l_c:.6f},{l_f:.6f},{l_tot:.6f},{top5:.6f}"
            rows.append(row)
            if log_file:
                log_file.write(row + "\n")
                log_file.flush()
            log.info("epoch %d  L_c=%.4f L_f=%.4f val top5@%gs=%.4f top1=%.4f",
                     epoch, l_c, l_f, cfg.selection_time, top5, top1)
            if best_key is None or (top5, top1) > best_key:
                best_key, best_state, best_epoch, stale = (top5, top1), params.state_dict(), epoch, 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
    finally:
        if log_file:
            log_file.close()
    params.load_state_dict(best_state)
    return Checkpoint(params, best_epoch, best_key[0], cfg, modality, rows)


def evaluate_checkpoints(checkpoints: Sequence[Checkpoint], dataset: Dataset, split: str,
                         weights: Sequence[float] | None = None) -> EvalReport:
    models = [(c.params, c.config.pipeline(), c.modality) for c in checkpoints]
    threshold = checkpoints[0].config.many_shot_threshold
    return evaluate(models, dataset, split, weights, threshold)


# -- ablation --------------------------------------------------------------------

ABLATION_HEADER = ("variant,loss,diff,intention,cell,epoch,top1_action,top5_action,"
                   "top1_verb,top1_noun,mt5r_action,status")


def ablation_grid(cfg: RunConfig) -> list[RunConfig]:
    for mode in cfg.grid_loss_mode:
        if mode not in LOSS_MODES:
            raise ConfigError(f"grid_loss_mode entry {mode!r} is not a loss mode")
    combos = itertools.product(cfg.grid_loss_mode, cfg.grid_residual, cfg.grid_intention, cfg.grid_cell)
    return [cfg.replace(loss_mode=m, residual=r, intention=i, cell=c) for m, r, i, c in combos]


def variant_tag(cfg: RunConfig) -> tuple[str, str, str, str]:
    return (cfg.loss_mode, "diff" if cfg.residual else "no-diff",
            "intention" if cfg.intention else "no-intention", cfg.cell)


def _run_variant(cfg: RunConfig, dataset: Dataset | None) -> str:
    tags = variant_tag(cfg)
    name = "/".join(tags)
    try:
        ds = dataset if dataset is not None else load_dataset(cfg.data, window=cfg.window)
        ckpt = train(cfg, ds)
        report = evaluate_checkpoints([ckpt], ds, "val")
        t = cfg.selection_time
        act, verb, noun = (report.get(t, x) for x in ("action", "verb", "noun"))
        fields = [name, *tags, str(ckpt.epoch), f"{act.top1:.6f}", f"{act.top5:.6f}",
                  f"{verb.top1:.6f}", f"{noun.top1:.6f}", f"{act.mt5r:.6f}", "ok"]
    except ImagineError as exc:
        log.error("variant %s failed: %s", name, exc)
        msg = str(exc).replace(",", ";").replace("\n", " ")
        fields = [name, *tags, "", "", "", "", "", "", f"error: {msg}"]
    return ",".join(fields)


def ablate(cfg: RunConfig, out: str | Path | None = None, dataset: Dataset | None = None,
           jobs: int = 1) -> list[str]:
    """Train every grid variant with the shared seed; one CSV row per variant.

    A failing variant produces an ``error`` row and the grid continues.
    """
    variants = ablation_grid(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_variant, variants, [None] * len(variants)))
    else:
        rows = [_run_variant(v, dataset) for v in variants]
    lines = [ABLATION_HEADER, *rows]
    if out is not None:
        Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return lines
