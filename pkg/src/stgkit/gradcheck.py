"""Analytic-vs-finite-difference gradient suite for the losses and decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import (
    FrameFeatures,
    QueryLayout,
    SpaceHeadParams,
    decode_space_loss_grad,
    decode_tube,
    stub_text_embed,
    stub_vision_embed,
)
from .geometry import BBox, Tube, to_corners
from .losses import (
    LossWeights,
    TokenBatch,
    numeric_gradient,
    relative_error,
    space_loss,
    space_loss_grad,
    time_loss,
    time_loss_grad,
)

FD_EPS = 1e-6


@dataclass(frozen=True)
class GradCheck:
    name: str
    seed: int
    rel_error: float

    def passed(self, tolerance: float) -> bool:
        return self.rel_error < tolerance


def _kink_distance(a: BBox, b: BBox) -> float:
    """Distance of the pair from any non-differentiable configuration."""
    ca, cb = to_corners(a), to_corners(b)
    gaps = [abs(p - g) for p, g in zip(a.as_tuple(), b.as_tuple())]
    gaps += [abs(p - g) for p, g in zip(ca, cb)]
    gaps += [abs(min(ca[2], cb[2]) - max(ca[0], cb[0])), abs(min(ca[3], cb[3]) - max(ca[1], cb[1]))]
    return min(gaps)


def _random_box(rng: np.random.Generator) -> BBox:
    w, h = rng.uniform(0.1, 0.5, 2)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return BBox(cx, cy, w, h)


def _random_tube(rng: np.random.Generator, start: int, n: int) -> Tube:
    return Tube(start, [_random_box(rng) for _ in range(n)])


def _well_conditioned(pred: Tube, gt: Tube, margin: float) -> bool:
    return all(_kink_distance(p, g) > margin for p, g in zip(pred.boxes, gt.boxes))


def check_space_loss(seed: int, weights: LossWeights = LossWeights(), fault: bool = False) -> GradCheck:
    rng = np.random.default_rng([seed, 1])
    n = int(rng.integers(1, 5))
    while True:
        gt = _random_tube(rng, 0, n)
        pred = _random_tube(rng, 0, n)
        if _well_conditioned(pred, gt, 1e-3):
            break

    def f(x: np.ndarray) -> float:
        boxes = [BBox(*row) for row in x.reshape(n, 4)]
        return space_loss(Tube(0, boxes), gt, weights)

    x0 = np.array([b.as_tuple() for b in pred.boxes]).ravel()
    analytic = space_loss_grad(pred, gt, weights).ravel()
    if fault:
        analytic = analytic * 1.01
    return GradCheck("space_loss", seed, relative_error(analytic, numeric_gradient(f, x0, FD_EPS)))


def check_time_loss(seed: int, fault: bool = False) -> GradCheck:
    rng = np.random.default_rng([seed, 2])
    steps, vocab = int(rng.integers(1, 5)), int(rng.integers(2, 9))
    logits = rng.normal(0.0, 2.0, (steps, vocab))
    targets = rng.integers(0, vocab, steps)

    def f(x: np.ndarray) -> float:
        return time_loss(TokenBatch(x.reshape(steps, vocab), targets))

    analytic = time_loss_grad(TokenBatch(logits, targets)).ravel()
    if fault:
        analytic = analytic * 1.01
    return GradCheck("time_loss", seed, relative_error(analytic, numeric_gradient(f, logits, FD_EPS)))


def random_decoder_problem(seed: int):
    """A small decode problem: layout, per-frame features, caption keys/values, head."""
    rng = np.random.default_rng([seed, 3])
    layout = QueryLayout(
        n_frames=int(rng.integers(1, 5)),
        tokens_per_frame=int(rng.integers(1, 5)),
        dim=int(rng.integers(2, 9)),
    )
    caption = [int(t) for t in rng.integers(0, 1000, int(rng.integers(1, 6)))]
    text = stub_text_embed(caption, layout.dim, seed)
    features = {
        f: FrameFeatures(
            stub_vision_embed(f, layout, seed), stub_text_embed([1000 + f], layout.dim, seed)
        )
        for f in range(layout.n_frames)
    }
    params = SpaceHeadParams.init(layout.dim, seed, scale=2.0)
    return rng, layout, features, text, params


def check_decoder(seed: int, weights: LossWeights = LossWeights(), fault: bool = False) -> GradCheck:
    rng, layout, features, text, params = random_decoder_problem(seed)
    frame_range = (0, layout.n_frames - 1)
    pred = decode_tube(frame_range, features, text, text, params)
    while True:
        gt = _random_tube(rng, 0, layout.n_frames)
        if _well_conditioned(pred, gt, 1e-3):
            break

    def f(x: np.ndarray) -> float:
        p = SpaceHeadParams.unflatten(x, layout.dim)
        return space_loss(decode_tube(frame_range, features, text, text, p), gt, weights)

    _, grads = decode_space_loss_grad(frame_range, features, text, text, params, gt, weights)
    analytic = grads.flatten()
    if fault:
        analytic = analytic * 1.01
    numeric = numeric_gradient(f, params.flatten(), FD_EPS)
    return GradCheck("decode_space_loss", seed, relative_error(analytic, numeric))


def run_suite(
    seeds: range | list[int],
    weights: LossWeights = LossWeights(),
    fault: bool = False,
) -> list[GradCheck]:
    results = []
    for seed in seeds:
        results.append(check_space_loss(seed, weights, fault))
        results.append(check_time_loss(seed, fault))
        results.append(check_decoder(seed, weights, fault))
    return results
