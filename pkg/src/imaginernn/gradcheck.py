"""Central finite-difference checks of every differentiable path."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cells import CellState, cell_step, init_cell, init_linear
from .imagination import rollout
from .losses import CandidateSet, NceConfig, batched_nce_loss, classification_loss, l2_loss, nce_loss
from .pipeline import ModelParams, PipelineConfig, forward_batch
from .samples import ActionVocab, AnticipationSample, TimelineConfig, timeline

STEP = 1e-5
TOLERANCE = 1e-4
_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||, 1e-6)``."""
    num = np.linalg.norm(analytic - numeric)
    return float(num / max(np.linalg.norm(analytic), np.linalg.norm(numeric), _FLOOR))


def check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = STEP,
          numeric_fn: Callable[[], float] | None = None) -> float:
    """Worst relative error over ``inputs`` of d fn() / d input.

    ``fn`` must rebuild its graph from the current ``inputs[i].data`` on every
    call. ``numeric_fn`` replaces ``fn`` on the finite-difference side when
    the back-propagated graph deliberately blocks part of the objective.
    """
    if numeric_fn is None:
        def numeric_fn():
            return fn().item()

    for t in inputs:
        t.zero_grad()
    ad.backward(fn())
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        numeric = np.zeros_like(t.data)
        flat, nflat = t.data.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = numeric_fn()
            flat[i] = old - step
            down = numeric_fn()
            flat[i] = old
            nflat[i] = (up - down) / (2 * step)
        worst = max(worst, relative_error(a, numeric))
        t.zero_grad()
    return worst


def _leaf(rng, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    """Random linear functional so every output entry gets a distinct weight."""
    w = Tensor(rng.normal(size=out.shape))
    return ad.sum(ad.mul(out, w))


def suite_primitives(seeds: int = 20) -> float:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
        x, y = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
        v = _leaf(rng, 5)
        w, bias = _leaf(rng, 2, 4), _leaf(rng, 2)
        mask = np.zeros((3, 4), dtype=bool)
        mask[0, 3] = mask[2, 1] = True
        cases = [
            (lambda: _weighted(ad.matmul(a, b), np.random.default_rng(seed)), [a, b]),
            (lambda: _weighted(ad.add(x, y), np.random.default_rng(seed)), [x, y]),
            (lambda: _weighted(ad.sub(x, y), np.random.default_rng(seed)), [x, y]),
            (lambda: _weighted(ad.mul(x, y), np.random.default_rng(seed)), [x, y]),
            (lambda: _weighted(ad.scale(x, -2.5), np.random.default_rng(seed)), [x]),
            (lambda: _weighted(ad.sigmoid(x), np.random.default_rng(seed)), [x]),
            (lambda: _weighted(ad.tanh(x), np.random.default_rng(seed)), [x]),
            (lambda: _weighted(ad.l2_normalize(v), np.random.default_rng(seed)), [v]),
            (lambda: _weighted(ad.l2_normalize(x), np.random.default_rng(seed)), [x]),
            (lambda: _weighted(ad.affine(x, w, bias), np.random.default_rng(seed)), [x, w, bias]),
            (lambda: _weighted(ad.affine(ad.slice_last(v, 0, 4), w, bias),
                               np.random.default_rng(seed)), [v, w, bias]),
            (lambda: _weighted(ad.concat([x, y]), np.random.default_rng(seed)), [x, y]),
            (lambda: _weighted(ad.concat([x, y], axis=0), np.random.default_rng(seed)), [x, y]),
            (lambda: _weighted(ad.slice_last(x, 1, 3), np.random.default_rng(seed)), [x]),
            (lambda: _weighted(ad.stack([x, y]), np.random.default_rng(seed)), [x, y]),
            (lambda: _weighted(ad.reshape(x, (4, 3)), np.random.default_rng(seed)), [x]),
            (lambda: _weighted(ad.transpose(x), np.random.default_rng(seed)), [x]),
            (lambda: ad.mean(ad.mul(x, x)), [x]),
            (lambda: ad.dot(v, v), [v]),
            (lambda: _weighted(ad.softmax_cross_entropy(x, [0, 2, 3]), np.random.default_rng(seed)), [x]),
            (lambda: _weighted(ad.softmax_cross_entropy(x, [0, 2, 3], mask), np.random.default_rng(seed)), [x]),
        ]
        for fn, inputs in cases:
            worst = max(worst, check(fn, inputs))
    return worst


def suite_cells(seeds: int = 5) -> float:
    worst = 0.0
    for seed in range(seeds):
        for kind in ("lstm", "gru"):
            rng = np.random.default_rng(seed)
            cell = init_cell(kind, 3, 4, rng, forget_bias=0.5)
            x = _leaf(rng, 2, 3)
            h = _leaf(rng, 2, 4, scale=0.5)
            c = _leaf(rng, 2, 4, scale=0.5) if kind == "lstm" else None
            wr = rng.normal(size=(2, 4))
            wc = rng.normal(size=(2, 4))

            def fn():
                out = cell_step(cell, x, CellState(h, c))
                total = ad.sum(ad.mul(out.h, Tensor(wr)))
                if out.c is not None:
                    total = ad.add(total, ad.sum(ad.mul(out.c, Tensor(wc))))
                return total

            inputs = [x, h, *cell.parameters()] + ([c] if c is not None else [])
            worst = max(worst, check(fn, inputs))
    return worst


def suite_rollout(seeds: int = 3, n: int = 4) -> float:
    worst = 0.0
    for seed in range(seeds):
        for kind in ("lstm", "gru"):
            for residual in (True, False):
                rng = np.random.default_rng(seed)
                cell = init_cell(kind, 3, 4, rng)
                phi = init_linear(4, 3, rng)
                f0 = _leaf(rng, 3)
                h0 = _leaf(rng, 4, scale=0.5)
                c0 = Tensor(rng.normal(0, 0.5, size=4), requires_grad=True) if kind == "lstm" else None
                weights = [rng.normal(size=3) for _ in range(n)]

                def fn():
                    traj = rollout(cell, phi, f0, CellState(h0, c0), n, residual)
                    terms = [ad.sum(ad.mul(f, Tensor(w))) for f, w in zip(traj.features, weights)]
                    return ad.sum(ad.stack(terms))

                inputs = [f0, h0, *cell.parameters(), *phi.parameters()] + ([c0] if c0 is not None else [])
                worst = max(worst, check(fn, inputs))
    return worst


def suite_losses(seeds: int = 10) -> float:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        f_hat = _leaf(rng, 5)
        pos = _leaf(rng, 5)
        negs = [_leaf(rng, 5) for _ in range(4)]
        cands = CandidateSet(pos, negs, ["hard", "hard", "easy", "easy"])
        cfg = NceConfig(0.2)
        worst = max(worst, check(lambda: nce_loss(f_hat, cands, cfg), [f_hat, pos, *negs]))
        pred, true = _leaf(rng, 6, 5), _leaf(rng, 6, 5)
        keys = [("a", 0), ("a", 1), ("b", 0), ("b", 1), ("a", 0), ("c", 5)]
        worst = max(worst, check(lambda: batched_nce_loss(pred, true, keys, cfg), [pred, true]))
        worst = max(worst, check(lambda: l2_loss(pred, true), [pred, true]))
        logits = _leaf(rng, 4, 6)
        worst = max(worst, check(lambda: classification_loss(logits, [0, 5, 2, 2]), [logits]))
    return worst


def tiny_problem(seed: int = 0, batch: int = 3):
    """A 3-dim feature, 2-action instance with a 1.0s window at alpha=0.25."""
    rng = np.random.default_rng(seed)
    tl_cfg = TimelineConfig(alpha=0.25, window=1.0, encoder_end_offset=0.75)
    tl = timeline(tl_cfg)
    vocab = ActionVocab.full_grid(1, 2)
    samples = []
    for i in range(batch):
        samples.append(AnticipationSample(
            f"v{i}", 1.0, {"x": rng.normal(size=(tl.encoder_steps, 3))}, (0, i % 2, i % 2),
            {"x": rng.normal(size=(tl.imagined_steps, 3))}, np.arange(1, tl.imagined_steps + 1)))
    return tl_cfg, vocab, samples


def suite_end_to_end(seeds: int = 2) -> float:
    """Full objective with intention; without it, ImagineRNN grads must match L_c alone."""
    worst = 0.0
    for seed in range(seeds):
        tl_cfg, vocab, samples = tiny_problem(seed)
        for kind in ("lstm", "gru"):
            for mode in ("contrastive", "l2", "contrastive+l2"):
                for residual in (True, False):
                    params = ModelParams.init(3, 4, 2, kind, seed=seed)
                    cfg = PipelineConfig(tl_cfg, residual=residual, loss_mode=mode)

                    def fn():
                        return forward_batch(params, samples, "x", cfg, vocab)[0].objective

                    worst = max(worst, check(fn, params.parameters()))

                params = ModelParams.init(3, 4, 2, kind, seed=seed)
                blocked = PipelineConfig(tl_cfg, loss_mode=mode, intention=False)

                def objective():
                    return forward_batch(params, samples, "x", blocked, vocab)[0].objective

                def imagination_only():
                    return forward_batch(params, samples, "x", blocked, vocab)[0].contrastive

                worst = max(worst, check(objective, params.imagination_parameters(),
                                         numeric_fn=imagination_only))
    return worst


SUITES: dict[str, Callable[[], float]] = {
    "autodiff primitives": suite_primitives,
    "recurrent cells": suite_cells,
    "imagination rollout (n=4)": suite_rollout,
    "losses (NCE, l2, cross-entropy)": suite_losses,
    "end-to-end objective": suite_end_to_end,
}


@dataclass
class SuiteResult:
    name: str
    worst: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst <= TOLERANCE


def run_all(suites: dict[str, Callable[[], float]] | None = None, echo: Callable[[str], None] | None = print
            ) -> list[SuiteResult]:
    results = []
    for name, suite in (suites or SUITES).items():
        start = time.perf_counter()
        worst = suite()
        res = SuiteResult(name, worst, time.perf_counter() - start)
        results.append(res)
        if echo:
            echo(f"{'PASS' if res.passed else 'FAIL'}  {name:34s} worst rel. error {worst:.3e}  ({res.seconds:.1f}s)")
    return results


def main() -> int:
    results = run_all()
    return 0 if all(r.passed for r in results) else 1
