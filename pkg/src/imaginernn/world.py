"""Synthetic egocentric-like feature streams and the on-disk dataset format.

Each video is a Markov chain of actions. Every modality has one prototype
vector per action (a verb part plus a noun part plus an action-specific
part); a frame shows the prototype of the running action, blended linearly
into the next action's prototype over the last ``blend_s`` seconds before
the boundary, plus a per-video Gaussian random-walk drift and white noise.

Directory layout (UTF-8 CSV, LF endings, floats with 9 significant digits)::

    verbs.csv      id,name
    nouns.csv      id,name
    actions.csv    action_id,verb_id,noun_id
    segments.csv   video_id,action_start_s,action_id,split
    manifest.csv   modality,dim,alpha_s
    features/<video_id>.<modality>.csv   time_s,f0,...,f{D-1}
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import convert, parse_kv
from .errors import ConfigError, CoverageError, DatasetError, ReferentialIntegrityError
from .samples import ActionVocab, AnticipationSample, TimelineConfig, timeline

SPLITS = ("train", "val", "test")
_TIME_TOL = 1e-6


def fmt(x: float) -> str:
    return f"{x:.9g}"


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    dim: int
    noise_std: float = 0.0
    drift_std: float = 0.0

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError(f"modality {self.name!r}: dim must be >= 2")
        if self.noise_std < 0 or self.drift_std < 0:
            raise ConfigError(f"modality {self.name!r}: noise and drift must be non-negative")
        if not self.name or any(c in self.name for c in ",./\\:"):
            raise ConfigError(f"bad modality name {self.name!r}")


DEFAULT_MODALITIES = (ModalitySpec("appearance", 32, 0.3, 0.02), ModalitySpec("motion", 24, 0.5, 0.02))


def sparse_transitions(num_actions: int, successors: int, seed: int) -> np.ndarray:
    """Row-stochastic matrix where each action leads to ``successors`` random actions."""
    if not 1 <= successors <= num_actions:
        raise ConfigError(f"successors must lie in [1, {num_actions}]")
    rng = np.random.default_rng([seed, 0x7A11])
    mat = np.zeros((num_actions, num_actions))
    for a in range(num_actions):
        nxt = rng.choice(num_actions, size=successors, replace=False)
        mat[a, nxt] = rng.dirichlet(np.ones(successors))
    return mat


@dataclass
class WorldConfig:
    num_verbs: int = 3
    num_nouns: int = 4
    transition: np.ndarray | None = None  # None: sparse_transitions(A, successors, seed)
    successors: int = 4
    duration_range: tuple[float, float] = (2.5, 5.0)
    segments_per_video: int = 8
    modalities: tuple[ModalitySpec, ...] = DEFAULT_MODALITIES
    videos: dict[str, int] = field(default_factory=lambda: {"train": 300, "val": 60, "test": 60})
    alpha: float = 0.25
    blend_s: float = 1.5
    history_s: float = 3.5
    seed: int = 0

    @property
    def num_actions(self) -> int:
        return self.num_verbs * self.num_nouns

    def transition_matrix(self) -> np.ndarray:
        if self.transition is None:
            return sparse_transitions(self.num_actions, self.successors, self.seed)
        return np.asarray(self.transition, dtype=np.float64)

    def validate(self) -> None:
        a = self.num_actions
        if self.num_verbs < 1 or self.num_nouns < 1:
            raise ConfigError("need at least one verb and one noun")
        mat = self.transition_matrix()
        if mat.shape != (a, a) or np.any(mat < 0) or np.any(np.abs(mat.sum(axis=1) - 1) > 1e-9):
            raise ConfigError(f"transition matrix must be a row-stochastic {a}x{a} matrix")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ConfigError("segment durations must be positive with min <= max")
        if round(lo / self.alpha) < 1:
            raise ConfigError("shortest segment is shorter than one frame step")
        if self.segments_per_video < 1 or self.alpha <= 0 or self.blend_s < 0 or self.history_s < 0:
            raise ConfigError("bad segment count, alpha, blend or history length")
        if set(self.videos) - set(SPLITS) or any(n < 0 for n in self.videos.values()):
            raise ConfigError(f"video counts must be non-negative and keyed by {SPLITS}")
        names = [m.name for m in self.modalities]
        if not names or len(set(names)) != len(names):
            raise ConfigError("modality names must be unique and non-empty")


def _parse_modalities(value: str) -> tuple[ModalitySpec, ...]:
    specs = []
    for item in value.split(","):
        parts = item.strip().split(":")
        if len(parts) != 4:
            raise ConfigError(f"modality spec {item.strip()!r} must be name:dim:noise:drift")
        specs.append(ModalitySpec(parts[0], int(parts[1]), float(parts[2]), float(parts[3])))
    return tuple(specs)


_WORLD_KEYS = {
    "num_verbs": int, "num_nouns": int, "transition": str, "successors": int,
    "duration_min": float, "duration_max": float, "segments_per_video": int,
    "modalities": _parse_modalities, "train_videos": int, "val_videos": int, "test_videos": int,
    "alpha": float, "blend_s": float, "history_s": float, "seed": int,
}


def world_config_from_text(text: str, source: str = "<config>", seed: int | None = None) -> WorldConfig:
    """Build a :class:`WorldConfig` from ``key = value`` text.

    ``transition`` is ``sparse`` (default), ``identity`` or ``uniform``.
    """
    kv = convert(parse_kv(text, source), _WORLD_KEYS, source)
    cfg = WorldConfig()
    for key in ("num_verbs", "num_nouns", "successors", "segments_per_video", "alpha",
                "blend_s", "history_s", "seed", "modalities"):
        if key in kv:
            setattr(cfg, key, kv[key])
    if seed is not None:
        cfg.seed = seed
    cfg.duration_range = (kv.get("duration_min", cfg.duration_range[0]),
                          kv.get("duration_max", cfg.duration_range[1]))
    cfg.videos = {s: kv.get(f"{s}_videos", cfg.videos[s]) for s in SPLITS}
    kind = kv.get("transition", "sparse")
    a = cfg.num_actions
    if kind == "identity":
        cfg.transition = np.eye(a)
    elif kind == "uniform":
        cfg.transition = np.full((a, a), 1.0 / a)
    elif kind != "sparse":
        raise ConfigError(f"{source}: transition must be sparse, identity or uniform, got {kind!r}")
    cfg.validate()
    return cfg


def read_world_config(path: str | Path, seed: int | None = None) -> WorldConfig:
    text = Path(path).read_text(encoding="utf-8")
    return world_config_from_text(text, str(path), seed)


@dataclass(frozen=True)
class Segment:
    video_id: str
    action_start: float
    action_id: int
    split: str


@dataclass
class DatasetManifest:
    vocab: ActionVocab
    segments: list[Segment]
    dims: dict[str, int]
    alpha: float
    feature_files: dict[str, dict[str, Path]] = field(default_factory=dict, compare=False)

    @property
    def modalities(self) -> list[str]:
        return list(self.dims)

    def videos(self, split: str | None = None) -> list[str]:
        seen = dict.fromkeys(s.video_id for s in self.segments if split is None or s.split == split)
        return list(seen)


def video_ids(cfg: WorldConfig) -> list[tuple[str, str]]:
    out, k = [], 0
    for split in SPLITS:
        for _ in range(cfg.videos.get(split, 0)):
            out.append((f"vid{k:05d}", split))
            k += 1
    return out


def prototypes(cfg: WorldConfig) -> dict[str, np.ndarray]:
    """Per-modality ``[num_actions, dim]`` prototype matrices."""
    out = {}
    vocab = ActionVocab.full_grid(cfg.num_verbs, cfg.num_nouns)
    for m_idx, spec in enumerate(cfg.modalities):
        rng = np.random.default_rng([cfg.seed, 0xB0B, m_idx])
        verb = rng.standard_normal((cfg.num_verbs, spec.dim))
        noun = rng.standard_normal((cfg.num_nouns, spec.dim))
        own = rng.standard_normal((cfg.num_actions, spec.dim))
        out[spec.name] = (verb[vocab.verb_of()] + noun[vocab.noun_of()] + own) / np.sqrt(3.0)
    return out


@dataclass
class SyntheticVideo:
    video_id: str
    actions: list[int]
    starts: list[float]
    times: np.ndarray
    features: dict[str, np.ndarray]


def synthesize_video(cfg: WorldConfig, video_id: str, protos: dict[str, np.ndarray] | None = None,
                     transition: np.ndarray | None = None) -> SyntheticVideo:
    """Deterministic in (cfg.seed, video_id), independent of generation order."""
    protos = prototypes(cfg) if protos is None else protos
    mat = cfg.transition_matrix() if transition is None else transition
    rng = np.random.default_rng([cfg.seed, zlib.crc32(video_id.encode())])
    a_count = cfg.num_actions
    actions = [int(rng.integers(a_count))]
    for _ in range(cfg.segments_per_video - 1):
        actions.append(int(rng.choice(a_count, p=mat[actions[-1]])))
    lo = max(1, round(cfg.duration_range[0] / cfg.alpha))
    hi = max(lo, round(cfg.duration_range[1] / cfg.alpha))
    lengths = rng.integers(lo, hi + 1, size=cfg.segments_per_video)
    start_steps = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    total = int(lengths.sum())
    steps = np.arange(total)
    times = steps * cfg.alpha
    seg = np.searchsorted(start_steps, steps, side="right") - 1
    # blending weight toward the next action over the final blend_s seconds of a segment
    weight = np.zeros(total)
    nxt = np.minimum(seg + 1, cfg.segments_per_video - 1)
    has_next = seg + 1 < cfg.segments_per_video
    if cfg.blend_s > 0:
        until = (start_steps[nxt] - steps) * cfg.alpha
        weight = np.where(has_next & (until < cfg.blend_s), (cfg.blend_s - until) / cfg.blend_s, 0.0)
    act = np.array(actions)
    features = {}
    for spec in cfg.modalities:
        p = protos[spec.name]
        base = p[act[seg]].copy()
        blend = weight > 0
        w = weight[blend, None]
        base[blend] = (1.0 - w) * p[act[seg[blend]]] + w * p[act[nxt[blend]]]
        drift = np.cumsum(rng.normal(0.0, 1.0, size=(total, spec.dim)) * spec.drift_std, axis=0)
        noise = rng.normal(0.0, 1.0, size=(total, spec.dim)) * spec.noise_std
        features[spec.name] = base + drift + noise
    starts = [float(s * cfg.alpha) for s in start_steps]
    return SyntheticVideo(video_id, actions, starts, times, features)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_features(path: Path, times: np.ndarray, feats: np.ndarray) -> None:
    dim = feats.shape[1]
    lines = ["time_s," + ",".join(f"f{i}" for i in range(dim))]
    for t, row in zip(times, feats):
        lines.append(fmt(t) + "," + ",".join(fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def gen_dataset(cfg: WorldConfig, out_dir: str | Path) -> DatasetManifest:
    """Generate every video and write the dataset directory."""
    cfg.validate()
    out = Path(out_dir)
    try:
        (out / "features").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {out}: {exc}") from exc
    vocab = ActionVocab.full_grid(cfg.num_verbs, cfg.num_nouns)
    protos = prototypes(cfg)
    mat = cfg.transition_matrix()
    segments: list[Segment] = []
    files: dict[str, dict[str, Path]] = {m.name: {} for m in cfg.modalities}
    try:
        for vid, split in video_ids(cfg):
            video = synthesize_video(cfg, vid, protos, mat)
            for a, start in zip(video.actions[1:], video.starts[1:]):
                if start >= cfg.history_s - _TIME_TOL:
                    segments.append(Segment(vid, float(fmt(start)), a, split))
            for spec in cfg.modalities:
                path = out / "features" / f"{vid}.{spec.name}.csv"
                _write_features(path, video.times, video.features[spec.name])
                files[spec.name][vid] = path
        _write_csv(out / "verbs.csv", ["id", "name"], sorted(vocab.verbs.items()))
        _write_csv(out / "nouns.csv", ["id", "name"], sorted(vocab.nouns.items()))
        _write_csv(out / "actions.csv", ["action_id", "verb_id", "noun_id"],
                   [(a, v, n) for a, (v, n) in sorted(vocab.actions.items())])
        _write_csv(out / "segments.csv", ["video_id", "action_start_s", "action_id", "split"],
                   [(s.video_id, fmt(s.action_start), s.action_id, s.split) for s in segments])
        _write_csv(out / "manifest.csv", ["modality", "dim", "alpha_s"],
                   [(m.name, m.dim, fmt(cfg.alpha)) for m in cfg.modalities])
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {out}: {exc}") from exc
    dims = {m.name: m.dim for m in cfg.modalities}
    return DatasetManifest(vocab, segments, dims, float(fmt(cfg.alpha)), files)


# -- loading ---------------------------------------------------------------------


def _read_table(path: Path, header: Sequence[str]) -> list[tuple[int, list[str]]]:
    if not path.is_file():
        raise DatasetError(f"missing file {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(header):
        raise DatasetError(f"{path}:1: expected header {','.join(header)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append((lineno, row))
    return out


def _as(kind, value: str, path: Path, lineno: int):
    try:
        return kind(value)
    except ValueError as exc:
        raise DatasetError(f"{path}:{lineno}: malformed value {value!r}") from exc


def _read_names(path: Path) -> dict[int, str]:
    out = {}
    for lineno, (i, name) in _read_table(path, ["id", "name"]):
        key = _as(int, i, path, lineno)
        if key in out:
            raise DatasetError(f"{path}:{lineno}: duplicate id {key}")
        out[key] = name
    return out


def read_feature_file(path: Path, dim: int, alpha: float) -> tuple[int, np.ndarray]:
    """Return (index of first frame, ``[n, dim]`` array); rows must be contiguous multiples of alpha."""
    if not path.is_file():
        raise DatasetError(f"missing feature file {path}")
    lines = path.read_text(encoding="utf-8").split("\n")
    expected = "time_s," + ",".join(f"f{i}" for i in range(dim))
    if lines[0] != expected:
        raise DatasetError(f"{path}:1: expected header with time_s and {dim} feature columns")
    if lines[-1] == "":
        lines.pop()
    values = np.empty((len(lines) - 1, dim))
    first = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise DatasetError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}")
        try:
            row = [float(x) for x in parts]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: malformed number") from exc
        if not all(np.isfinite(row)):
            raise DatasetError(f"{path}:{lineno}: non-finite value")
        ratio = row[0] / alpha
        k = round(ratio)
        if abs(ratio - k) > _TIME_TOL:
            raise DatasetError(f"{path}:{lineno}: time {parts[0]} is not a multiple of {alpha:g}")
        if first is None:
            first = k
        elif k != first + lineno - 2:
            raise CoverageError(f"{path}:{lineno}: coverage gap, expected time "
                                f"{fmt((first + lineno - 2) * alpha)} but found {parts[0]}")
        values[lineno - 2] = row[1:]
    if first is None:
        raise CoverageError(f"{path}: no feature rows")
    return first, values


class Dataset:
    """A loaded dataset directory with cached per-video feature arrays."""

    def __init__(self, root: Path, manifest: DatasetManifest):
        self.root = root
        self.manifest = manifest
        self._cache: dict[tuple[str, str], tuple[int, np.ndarray]] = {}

    @property
    def vocab(self) -> ActionVocab:
        return self.manifest.vocab

    def features(self, video_id: str, modality: str) -> tuple[int, np.ndarray]:
        key = (video_id, modality)
        if key not in self._cache:
            try:
                path = self.manifest.feature_files[modality][video_id]
            except KeyError as exc:
                raise DatasetError(f"no {modality!r} features for video {video_id}") from exc
            self._cache[key] = read_feature_file(path, self.manifest.dims[modality], self.manifest.alpha)
        return self._cache[key]

    def samples(self, split: str, modalities: Sequence[str] | str, tl_cfg: TimelineConfig,
                with_future: bool = True) -> list[AnticipationSample]:
        """Cut one :class:`AnticipationSample` per segment of ``split``."""
        if isinstance(modalities, str):
            modalities = [modalities]
        for m in modalities:
            if m not in self.manifest.dims:
                raise DatasetError(f"unknown modality {m!r}; have {self.manifest.modalities}")
        if abs(tl_cfg.alpha - self.manifest.alpha) > 1e-12:
            raise DatasetError(f"timeline step {tl_cfg.alpha:g}s differs from dataset step {self.manifest.alpha:g}s")
        tl = timeline(tl_cfg)
        rel = np.array([round(t / tl.alpha) for t in tl.step_times])
        out = []
        vocab = self.vocab
        for seg in self.manifest.segments:
            if seg.split != split:
                continue
            start = round(seg.action_start / tl.alpha)
            idx = start + rel
            observed, future = {}, {}
            for m in modalities:
                first, feats = self.features(seg.video_id, m)
                lo, hi = idx[0] - first, idx[-1] - first
                if lo < 0 or hi >= len(feats):
                    raise CoverageError(f"features/{seg.video_id}.{m}.csv does not cover "
                                        f"[{fmt(seg.action_start - tl_cfg.window)}, {fmt(seg.action_start)}]s")
                rows = feats[idx - first]
                observed[m] = rows[:tl.encoder_steps]
                future[m] = rows[tl.encoder_steps:]
            v, n = vocab.actions[seg.action_id]
            out.append(AnticipationSample(seg.video_id, seg.action_start, observed, (v, n, seg.action_id),
                                          future if with_future else None, idx[tl.encoder_steps:].copy()))
        return out


def load_dataset(root: str | Path, window: float = 3.5, validate: bool = True) -> Dataset:
    """Read and validate a dataset directory.

    With ``validate`` every feature file is parsed up front and checked to
    cover ``[action_start - window, action_start]`` for each of its segments.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    verbs = _read_names(root / "verbs.csv")
    nouns = _read_names(root / "nouns.csv")
    actions = {}
    path = root / "actions.csv"
    for lineno, (a, v, n) in _read_table(path, ["action_id", "verb_id", "noun_id"]):
        a, v, n = (_as(int, x, path, lineno) for x in (a, v, n))
        if v not in verbs or n not in nouns:
            raise ReferentialIntegrityError(f"{path}:{lineno}: action {a} refers to unknown verb/noun")
        actions[a] = (v, n)
    try:
        vocab = ActionVocab(verbs, nouns, actions)
    except Exception as exc:
        raise DatasetError(f"{root}: inconsistent vocabulary: {exc}") from exc

    dims, alphas = {}, set()
    path = root / "manifest.csv"
    for lineno, (m, d, a) in _read_table(path, ["modality", "dim", "alpha_s"]):
        dims[m] = _as(int, d, path, lineno)
        alphas.add(_as(float, a, path, lineno))
    if len(alphas) != 1:
        raise DatasetError(f"{path}: modalities must share one alpha_s")
    alpha = alphas.pop()

    segments = []
    path = root / "segments.csv"
    for lineno, (vid, start, a, split) in _read_table(path, ["video_id", "action_start_s", "action_id", "split"]):
        a_id = _as(int, a, path, lineno)
        if a_id not in actions:
            raise ReferentialIntegrityError(f"{path}:{lineno}: action id {a_id} not in actions.csv")
        if split not in SPLITS:
            raise DatasetError(f"{path}:{lineno}: unknown split {split!r}")
        segments.append(Segment(vid, _as(float, start, path, lineno), a_id, split))

    split_of: dict[str, str] = {}
    for seg in segments:
        if split_of.setdefault(seg.video_id, seg.split) != seg.split:
            raise DatasetError(f"video {seg.video_id} appears in splits {split_of[seg.video_id]} and {seg.split}")

    files = {m: {vid: root / "features" / f"{vid}.{m}.csv" for vid in split_of} for m in dims}
    manifest = DatasetManifest(vocab, segments, dims, alpha, files)
    ds = Dataset(root, manifest)
    if validate:
        lo_steps = round(window / alpha)
        for seg in segments:
            start = round(seg.action_start / alpha)
            for m in dims:
                first, feats = ds.features(seg.video_id, m)
                if start - lo_steps < first or start > first + len(feats) - 1:
                    raise CoverageError(
                        f"{files[m][seg.video_id]}: coverage gap, segment at {fmt(seg.action_start)}s "
                        f"needs frames from {fmt(seg.action_start - window)}s to {fmt(seg.action_start)}s")
    return ds
