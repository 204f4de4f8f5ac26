import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imaginernn import autodiff as ad
from imaginernn.autodiff import Tensor
from imaginernn.errors import ConfigError, ContractError, DegenerateVectorError, LabelError
from imaginernn.gradcheck import tiny_problem
from imaginernn.losses import (CandidateSet, NceConfig, batched_nce_loss, build_candidates,
                               classification_loss, l2_loss, nce_loss, total_loss)
from imaginernn.pipeline import ModelParams, PipelineConfig, forward_batch
from imaginernn.samples import AnticipationSample


def _sample(video, frames, start=0):
    n = len(frames)
    return AnticipationSample(video, 10.0, {"x": np.zeros((2, frames.shape[1]))}, (0, 0, 0),
                              {"x": frames}, np.arange(start, start + n))


def _reference_nce(f_hat, positive, negatives, tau):
    def unit(v):
        return v / np.linalg.norm(v)
    q = unit(f_hat)
    logits = np.array([unit(positive) @ q] + [unit(v) @ q for v in negatives]) / tau
    return -logits[0] + math.log(np.exp(logits).sum())


class TestNce:
    def test_single_negative(self):
        cands = CandidateSet(Tensor([1.0, 0.0]), [Tensor([0.0, 1.0])], ["easy"])
        loss = nce_loss(Tensor([2.0, 0.0]), cands, NceConfig(1.0)).item()
        expected = -math.log(math.e / (math.e + 1.0))
        assert abs(loss - expected) <= 1e-9
        assert loss == pytest.approx(0.31326, abs=1e-5)

    @pytest.mark.parametrize("k", [1, 2, 7, 15])
    def test_uniform_similarity(self, k):
        v = np.array([0.3, -1.2, 2.0])
        cands = CandidateSet(Tensor(v), [Tensor(v) for _ in range(k)], ["hard"] * k)
        loss = nce_loss(Tensor(v), cands, NceConfig(0.2)).item()
        assert abs(loss - math.log(k + 1)) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 2.0))
    def test_positive_rescaling_invariance(self, seed, tau):
        rng = np.random.default_rng(seed)
        f, pos = rng.normal(size=4), rng.normal(size=4)
        negs = [rng.normal(size=4) for _ in range(5)]
        base = nce_loss(Tensor(f), CandidateSet(Tensor(pos), [Tensor(n) for n in negs], ["easy"] * 5),
                        NceConfig(tau)).item()
        scaled = nce_loss(Tensor(7.3 * f),
                          CandidateSet(Tensor(7.3 * pos), [Tensor(7.3 * n) for n in negs], ["easy"] * 5),
                          NceConfig(tau)).item()
        assert abs(base - scaled) <= 1e-9
        assert base >= 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_reference_formula(self, seed):
        rng = np.random.default_rng(seed)
        f, pos = rng.normal(size=6), rng.normal(size=6)
        negs = [rng.normal(size=6) for _ in range(4)]
        got = nce_loss(Tensor(f), CandidateSet(Tensor(pos), [Tensor(n) for n in negs], ["hard"] * 4),
                       NceConfig(0.2)).item()
        assert got == pytest.approx(_reference_nce(f, pos, negs, 0.2), abs=1e-12)

    def test_improves_as_prediction_approaches_positive(self):
        rng = np.random.default_rng(0)
        pos, neg = rng.normal(size=5), rng.normal(size=5)
        cands = CandidateSet(Tensor(pos), [Tensor(neg)], ["easy"])
        losses = [nce_loss(Tensor((1 - a) * neg + a * pos), cands).item() for a in np.linspace(0.1, 1, 10)]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_degenerate_prediction(self):
        cands = CandidateSet(Tensor([1.0, 0.0]), [Tensor([0.0, 1.0])], ["easy"])
        with pytest.raises(DegenerateVectorError):
            nce_loss(Tensor([0.0, 0.0]), cands)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ConfigError):
            NceConfig(0.0)


class TestCandidates:
    def test_two_samples_eight_frames(self):
        rng = np.random.default_rng(0)
        batch = [_sample("a", rng.normal(size=(8, 3))), _sample("b", rng.normal(size=(8, 3)))]
        cands = build_candidates(batch, 0, 3)
        assert len(cands) == 16
        assert cands.tags.count("hard") == 7 and cands.tags.count("easy") == 8
        np.testing.assert_array_equal(cands.positive.data, batch[0].future_truth["x"][3])

    def test_single_sample(self):
        cands = build_candidates([_sample("a", np.ones((8, 3)))], 0, 0)
        assert cands.tags.count("hard") == 7 and "easy" not in cands.tags

    def test_single_frame_single_sample(self):
        with pytest.raises(ConfigError):
            build_candidates([_sample("a", np.ones((1, 3)))], 0, 0)

    def test_same_frame_of_overlapping_window_excluded(self):
        rng = np.random.default_rng(1)
        batch = [_sample("a", rng.normal(size=(4, 3)), start=10), _sample("a", rng.normal(size=(4, 3)), start=12)]
        # frame 12 of video "a" is row 2 of sample 0 and row 0 of sample 1
        cands = build_candidates(batch, 0, 2)
        assert len(cands.negatives) == 6


class TestBatchedNce:
    @pytest.mark.parametrize("seed", range(3))
    def test_equals_mean_of_per_candidate_losses(self, seed):
        rng = np.random.default_rng(seed)
        videos = ["a", "b", "a"]
        starts = [0, 0, 2]
        batch = [_sample(v, rng.normal(size=(4, 3)), s) for v, s in zip(videos, starts)]
        pred = rng.normal(size=(3, 4, 3))
        cfg = NceConfig(0.2)
        expected = np.mean([nce_loss(Tensor(pred[s, k]), build_candidates(batch, s, k), cfg).item()
                            for s in range(3) for k in range(4)])
        rows = [(s, k) for k in range(4) for s in range(3)]
        got = batched_nce_loss(Tensor(np.stack([pred[s, k] for s, k in rows])),
                               Tensor(np.stack([batch[s].future_truth["x"][k] for s, k in rows])),
                               [(batch[s].video_id, int(batch[s].frame_index[k])) for s, k in rows], cfg)
        assert got.item() == pytest.approx(expected, abs=1e-12)

    def test_no_distractor(self):
        with pytest.raises(ConfigError):
            batched_nce_loss(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), [("a", 0)])


class TestRegressionAndClassification:
    def test_l2(self):
        assert l2_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0
        assert l2_loss(Tensor([1.0, 1.0]), Tensor([0.0, 0.0])).item() == 1.0

    def test_uniform_logits(self):
        assert classification_loss(Tensor(np.zeros(12)), 5).item() == pytest.approx(math.log(12), abs=1e-12)

    def test_saturated_correct(self):
        logits = np.zeros(4)
        logits[2] = 50.0
        assert classification_loss(Tensor(logits), 2).item() <= 1e-9

    def test_three_classes(self):
        expected = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
        got = classification_loss(Tensor([1.0, 2.0, 3.0]), 2).item()
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.40761, abs=1e-5)

    def test_batch_mean(self):
        logits = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
        expected = (classification_loss(Tensor(logits[0]), 2).item() + math.log(3)) / 2
        assert classification_loss(Tensor(logits), [2, 0]).item() == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("label", [-1, 3])
    def test_label_out_of_range(self, label):
        with pytest.raises(LabelError):
            classification_loss(Tensor([1.0, 2.0, 3.0]), label)


class TestTotal:
    def test_sum(self):
        out = total_loss([Tensor([1.5])], [Tensor([0.5])])
        assert out.total == 2.0 and out.contrastive == 0.5 and out.classification == 1.5

    def test_l2_with_perfect_imagination(self):
        f = Tensor([0.2, -0.4])
        out = total_loss([Tensor([0.7])], regression=[l2_loss(f, Tensor(f.data))], mode="l2")
        assert out.total == out.classification == 0.7

    def test_step_means(self):
        out = total_loss([Tensor([1.0]), Tensor([3.0])], [Tensor([0.5]), Tensor([1.5])],
                         [Tensor([2.0])], mode="contrastive+l2")
        assert out.classification == 2.0
        assert out.contrastive == 3.0

    def test_empty_lists(self):
        with pytest.raises(ContractError):
            total_loss([], [Tensor([0.5])])
        with pytest.raises(ContractError):
            total_loss([Tensor([1.0])], [], mode="contrastive")
        with pytest.raises(ConfigError):
            total_loss([Tensor([1.0])], [Tensor([1.0])], mode="bogus")


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_without_intention_imagination_sees_only_contrastive_gradient(kind):
    tl_cfg, vocab, samples = tiny_problem(4)

    def imagination_grads(params, cfg):
        loss, _ = forward_batch(params, samples, "x", cfg, vocab)
        ad.backward(loss.objective)
        return loss, [p.grad.copy() for p in params.imagination_parameters()]

    params = ModelParams.init(3, 4, 2, kind, seed=4)
    loss, blocked = imagination_grads(params, PipelineConfig(tl_cfg, intention=False))
    assert loss.total == pytest.approx(loss.contrastive + loss.classification, abs=1e-15)
    assert all(np.abs(p.grad).sum() > 0 for p in params.decoder.parameters())

    # a zero classifier leaves no classification path at all, so with
    # intention on the imagination gradient is exactly dL_c
    reference = ModelParams.init(3, 4, 2, kind, seed=4)
    for p in reference.classifier.parameters():
        p.data[...] = 0.0
    _, only_c = imagination_grads(reference, PipelineConfig(tl_cfg, intention=True))
    for a, b in zip(blocked, only_c):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_intention_changes_imagination_gradient():
    tl_cfg, vocab, samples = tiny_problem(2)
    grads = []
    for intention in (True, False):
        params = ModelParams.init(3, 4, 2, "lstm", seed=2)
        loss, _ = forward_batch(params, samples, "x", PipelineConfig(tl_cfg, intention=intention), vocab)
        ad.backward(loss.objective)
        grads.append(params.phi.weight.grad.copy())
    assert np.abs(grads[0] - grads[1]).max() > 1e-8
