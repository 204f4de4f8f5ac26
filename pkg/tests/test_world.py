import filecmp
import shutil
from pathlib import Path

import numpy as np
import pytest

from imaginernn.errors import ConfigError, CoverageError, DatasetError, ReferentialIntegrityError
from imaginernn.samples import TimelineConfig
from imaginernn.world import (ModalitySpec, WorldConfig, gen_dataset, load_dataset, prototypes, sparse_transitions,
                              synthesize_video, world_config_from_text)

QUIET = (ModalitySpec("a", 6, 0.0, 0.0), ModalitySpec("b", 3, 0.0, 0.0))


def _cos(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def _tree_equal(a: Path, b: Path) -> bool:
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    if files != sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file()):
        return False
    return all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)


class TestConfig:
    def test_sparse_rows_are_stochastic(self):
        mat = sparse_transitions(12, 4, seed=5)
        np.testing.assert_allclose(mat.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((mat > 0).sum(axis=1) == 4)

    def test_rejects_bad_matrix(self):
        with pytest.raises(ConfigError):
            WorldConfig(num_verbs=1, num_nouns=2, transition=np.array([[0.5, 0.4], [0, 1]])).validate()

    def test_rejects_small_dim(self):
        with pytest.raises(ConfigError):
            ModalitySpec("x", 1)

    def test_from_text(self):
        cfg = world_config_from_text("num_verbs = 2\nnum_nouns = 2\ntransition = identity\n"
                                     "modalities = a:4:0:0\ntrain_videos = 3  # few\n", seed=9)
        assert cfg.num_actions == 4 and cfg.seed == 9 and cfg.videos["train"] == 3
        np.testing.assert_array_equal(cfg.transition_matrix(), np.eye(4))

    @pytest.mark.parametrize("text", ["colour = red", "transition = chaotic", "num_verbs = two",
                                      "modalities = a:4:0"])
    def test_bad_text(self, text):
        with pytest.raises(ConfigError):
            world_config_from_text(text)


class TestSynthesis:
    def test_noiseless_interior_is_prototype(self):
        cfg = WorldConfig(modalities=QUIET, seed=1)
        protos = prototypes(cfg)
        video = synthesize_video(cfg, "vid00004")
        starts = video.starts[1:] + [len(video.times) * cfg.alpha]
        checked = 0
        for action, start, end in zip(video.actions, video.starts, starts):
            interior = (video.times >= start) & (video.times < end - cfg.blend_s)
            for name, feats in video.features.items():
                np.testing.assert_array_equal(feats[interior], np.broadcast_to(protos[name][action],
                                                                               feats[interior].shape))
            checked += interior.sum()
        assert checked > 0

    def test_identity_chain_repeats_one_action(self, tmp_path):
        a = 6
        cfg = WorldConfig(num_verbs=2, num_nouns=3, transition=np.eye(a), modalities=QUIET,
                          videos={"train": 5, "val": 2, "test": 0})
        manifest = gen_dataset(cfg, tmp_path)
        for vid in manifest.videos():
            video = synthesize_video(cfg, vid)
            assert len(set(video.actions)) == 1
            assert {s.action_id for s in manifest.segments if s.video_id == vid} == {video.actions[0]}

    def test_blending_moves_toward_next_action(self):
        cfg = WorldConfig(seed=2)
        protos = prototypes(cfg)
        wins, total = 0, 0
        for k in range(40):
            video = synthesize_video(cfg, f"vid{k:05d}", protos)
            for nxt, start in zip(video.actions[1:], video.starts[1:]):
                i = round(start / cfg.alpha)
                if i < 8:
                    continue
                for name, feats in video.features.items():
                    near = _cos(feats[i - 1], protos[name][nxt])
                    far = _cos(feats[i - 8], protos[name][nxt])
                    wins += near > far
                    total += 1
        assert total > 400
        assert wins / total > 0.9

    def test_blending_exact_without_noise(self):
        cfg = WorldConfig(modalities=QUIET, seed=4)
        protos = prototypes(cfg)
        for k in range(10):
            video = synthesize_video(cfg, f"vid{k:05d}", protos)
            for prev, nxt, start in zip(video.actions, video.actions[1:], video.starts[1:]):
                if prev == nxt:
                    continue
                i = round(start / cfg.alpha)
                for name, feats in video.features.items():
                    assert _cos(feats[i - 1], protos[name][nxt]) > _cos(feats[i - 8], protos[name][nxt])

    def test_video_independent_of_generation_order(self):
        cfg = WorldConfig(seed=7)
        a = synthesize_video(cfg, "vid00011")
        synthesize_video(cfg, "vid00003")
        b = synthesize_video(cfg, "vid00011")
        assert a.actions == b.actions
        np.testing.assert_array_equal(a.features["motion"], b.features["motion"])


class TestFiles:
    def test_byte_identical_regeneration(self, tmp_path):
        cfg = WorldConfig(videos={"train": 4, "val": 2, "test": 1}, seed=11)
        gen_dataset(cfg, tmp_path / "one")
        gen_dataset(cfg, tmp_path / "two")
        assert _tree_equal(tmp_path / "one", tmp_path / "two")

    def test_seed_changes_output(self, tmp_path):
        gen_dataset(WorldConfig(videos={"train": 2, "val": 0, "test": 0}, seed=1), tmp_path / "one")
        gen_dataset(WorldConfig(videos={"train": 2, "val": 0, "test": 0}, seed=2), tmp_path / "two")
        assert not _tree_equal(tmp_path / "one", tmp_path / "two")

    def test_round_trip(self, small_world):
        root, manifest = small_world
        loaded = load_dataset(root).manifest
        assert loaded == manifest
        assert loaded.feature_files["motion"]["vid00000"] == manifest.feature_files["motion"]["vid00000"]

    def test_formats(self, small_world):
        root, _ = small_world
        assert (root / "segments.csv").read_text().splitlines()[0] == "video_id,action_start_s,action_id,split"
        assert (root / "manifest.csv").read_text() == "modality,dim,alpha_s\nappearance,32,0.25\nmotion,24,0.25\n"
        row = (root / "features" / "vid00000.motion.csv").read_text().splitlines()[2]
        assert row.startswith("0.25,") and len(row.split(",")) == 25
        assert b"\r" not in (root / "actions.csv").read_bytes()

    def test_splits_disjoint(self, small_world):
        _, manifest = small_world
        split_sets = [set(manifest.videos(s)) for s in ("train", "val", "test")]
        assert sum(len(s) for s in split_sets) == len(set.union(*split_sets))
        assert all(s.action_start >= 3.5 for s in manifest.segments)

    def test_samples_cut_the_right_frames(self, small_world, small_dataset):
        seg = next(s for s in small_world[1].segments if s.split == "val")
        samples = small_dataset.samples("val", ["appearance", "motion"], TimelineConfig())
        s = samples[0]
        assert (s.video_id, s.action_start, s.action) == (seg.video_id, seg.action_start, seg.action_id)
        first, feats = small_dataset.features(seg.video_id, "motion")
        k = round(seg.action_start / 0.25)
        np.testing.assert_array_equal(s.observed["motion"], feats[k - 14 - first:k - 7 - first])
        np.testing.assert_array_equal(s.future_truth["motion"], feats[k - 7 - first:k - first])
        np.testing.assert_array_equal(s.frame_index, np.arange(k - 7, k))


def _copy(root: Path, dst: Path) -> Path:
    shutil.copytree(root, dst)
    return dst


class TestValidation:
    def test_coverage_gap(self, small_world, tmp_path):
        root = _copy(small_world[0], tmp_path / "ds")
        path = root / "features" / "vid00002.appearance.csv"
        lines = path.read_text().splitlines(keepends=True)
        del lines[6]
        path.write_text("".join(lines))
        with pytest.raises(CoverageError, match=r"vid00002\.appearance\.csv:7"):
            load_dataset(root)

    def test_truncated_feature_file(self, small_world, tmp_path):
        root = _copy(small_world[0], tmp_path / "ds")
        path = root / "features" / "vid00001.motion.csv"
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("".join(lines[:10]))
        with pytest.raises(CoverageError, match="vid00001.motion.csv"):
            load_dataset(root)

    def test_unknown_action(self, small_world, tmp_path):
        root = _copy(small_world[0], tmp_path / "ds")
        path = root / "segments.csv"
        lines = path.read_text().splitlines(keepends=True)
        vid, start, _, split = lines[3].strip().split(",")
        lines[3] = f"{vid},{start},99,{split}\n"
        path.write_text("".join(lines))
        with pytest.raises(ReferentialIntegrityError, match=r"segments\.csv:4"):
            load_dataset(root)

    def test_missing_file(self, small_world, tmp_path):
        root = _copy(small_world[0], tmp_path / "ds")
        (root / "nouns.csv").unlink()
        with pytest.raises(DatasetError, match="nouns.csv"):
            load_dataset(root)

    def test_malformed_row(self, small_world, tmp_path):
        root = _copy(small_world[0], tmp_path / "ds")
        path = root / "features" / "vid00000.motion.csv"
        lines = path.read_text().splitlines(keepends=True)
        lines[4] = lines[4].replace(",", ",x", 1)
        path.write_text("".join(lines))
        with pytest.raises(DatasetError, match=r"vid00000\.motion\.csv:5"):
            load_dataset(root)

    def test_video_in_two_splits(self, small_world, tmp_path):
        root = _copy(small_world[0], tmp_path / "ds")
        path = root / "segments.csv"
        text = path.read_text()
        first = text.splitlines()[1]
        vid, start, a, split = first.split(",")
        other = "val" if split != "val" else "train"
        path.write_text(text + f"{vid},{float(start) + 5},{a},{other}\n")
        with pytest.raises(DatasetError, match=vid):
            load_dataset(root)
