"""Training objectives: box regression (L1 + GIoU), token cross-entropy, total.

Every loss has an analytic gradient next to it; :func:`numeric_gradient` is
the finite-difference oracle those gradients are checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import BBox, Tube, box_area, box_giou, to_corners


@dataclass(frozen=True)
class LossWeights:
    lambda_time: float = 1.0
    lambda_space: float = 1.0
    lambda_l1: float = 3.0
    lambda_giou: float = 1.0

    def __post_init__(self) -> None:
        for name in ("lambda_time", "lambda_space", "lambda_l1", "lambda_giou"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")


@dataclass(frozen=True)
class TokenBatch:
    logits: np.ndarray
    targets: tuple[int, ...]

    def __init__(self, logits, targets: Sequence[int]):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2:
            raise ValueError(f"logits must be (steps, vocab), got shape {logits.shape}")
        targets = tuple(int(t) for t in targets)
        if len(targets) != logits.shape[0]:
            raise ValueError(f"{len(targets)} targets for {logits.shape[0]} steps")
        if any(t < 0 or t >= logits.shape[1] for t in targets):
            raise ValueError(f"target id outside vocab of {logits.shape[1]}")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "targets", targets)


def _aligned_boxes(
    pred: Tube, gt: Tube, frame_range: tuple[int, int] | None
) -> list[tuple[BBox, BBox]]:
    first, last = frame_range if frame_range is not None else (gt.start_frame, gt.end_frame)
    frames = range(first, last + 1)
    missing = [f for f in frames if f not in pred or f not in gt]
    if first > last or missing:
        raise ValueError(
            f"tubes do not both cover frames [{first}, {last}]"
            + (f"; missing {missing[:5]}" if missing else "")
        )
    return [(pred.box_at(f), gt.box_at(f)) for f in frames]


def l1_loss(pred: Tube, gt: Tube, frame_range: tuple[int, int] | None = None) -> float:
    """Mean over frames of the summed absolute coordinate error.

    Only frames inside ``frame_range`` (default: the GT tube's frames) count.
    """
    pairs = _aligned_boxes(pred, gt, frame_range)
    per_frame = [
        math.fsum(abs(p - g) for p, g in zip(pb.as_tuple(), gb.as_tuple())) for pb, gb in pairs
    ]
    return math.fsum(per_frame) / len(per_frame)


def l1_loss_grad(pred: Tube, gt: Tube, frame_range: tuple[int, int] | None = None) -> np.ndarray:
    pairs = _aligned_boxes(pred, gt, frame_range)
    diff = np.array([np.subtract(p.as_tuple(), g.as_tuple()) for p, g in pairs])
    return np.sign(diff) / len(pairs)


def _excluded(a: BBox, b: BBox) -> bool:
    # identical zero-area pairs carry no overlap signal
    return a == b and box_area(a) == 0.0


def giou_with_grad(a: BBox, b: BBox) -> tuple[float, np.ndarray]:
    """GIoU of ``a`` against ``b`` and its gradient w.r.t. ``a``'s (cx, cy, w, h).

    Gradients are taken on the branch selected by the max/min comparisons;
    exact ties are kinks and return one of the one-sided derivatives.
    """
    if box_area(a) == 0.0 or box_area(b) == 0.0:
        return box_giou(a, b), np.zeros(4)
    ax1, ay1, ax2, ay2 = to_corners(a)
    bx1, by1, bx2, by2 = to_corners(b)
    aw, ah = ax2 - ax1, ay2 - ay1
    area_a, area_b = aw * ah, (bx2 - bx1) * (by2 - by1)

    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    overlapping = iw > 0.0 and ih > 0.0
    inter = iw * ih if overlapping else 0.0
    union = area_a + area_b - inter
    cw = max(ax2, bx2) - min(ax1, bx1)
    ch = max(ay2, by2) - min(ay1, by1)
    enclose = cw * ch
    giou = inter / union - (enclose - union) / enclose

    # partials w.r.t. corners (x1, y1, x2, y2) of a
    d_area = np.array([-ah, -aw, ah, aw])
    d_inter = np.zeros(4)
    if overlapping:
        d_inter = np.array(
            [
                -ih if ax1 > bx1 else 0.0,
                -iw if ay1 > by1 else 0.0,
                ih if ax2 < bx2 else 0.0,
                iw if ay2 < by2 else 0.0,
            ]
        )
    d_enclose = np.array(
        [
            -ch if ax1 < bx1 else 0.0,
            -cw if ay1 < by1 else 0.0,
            ch if ax2 > bx2 else 0.0,
            cw if ay2 > by2 else 0.0,
        ]
    )
    d_union = d_area - d_inter
    # giou = I/U - 1 + U/C
    d_corners = (
        d_inter / union
        - inter * d_union / union**2
        + d_union / enclose
        - union * d_enclose / enclose**2
    )
    # x1 = cx - w/2, x2 = cx + w/2 (same for y)
    gx1, gy1, gx2, gy2 = d_corners
    grad = np.array([gx1 + gx2, gy1 + gy2, (gx2 - gx1) / 2.0, (gy2 - gy1) / 2.0])
    return giou, grad


def giou_loss(pred: Tube, gt: Tube, frame_range: tuple[int, int] | None = None) -> float:
    """Mean over frames of ``1 - GIoU``."""
    pairs = [pg for pg in _aligned_boxes(pred, gt, frame_range) if not _excluded(*pg)]
    if not pairs:
        return 0.0
    return math.fsum(1.0 - box_giou(p, g) for p, g in pairs) / len(pairs)


def giou_loss_grad(pred: Tube, gt: Tube, frame_range: tuple[int, int] | None = None) -> np.ndarray:
    pairs = _aligned_boxes(pred, gt, frame_range)
    kept = [not _excluded(p, g) for p, g in pairs]
    n_kept = sum(kept)
    grad = np.zeros((len(pairs), 4))
    for k, ((p, g), keep) in enumerate(zip(pairs, kept)):
        if keep:
            grad[k] = -giou_with_grad(p, g)[1] / n_kept
    return grad


def space_loss(
    pred: Tube,
    gt: Tube,
    w: LossWeights = LossWeights(),
    frame_range: tuple[int, int] | None = None,
) -> float:
    return w.lambda_l1 * l1_loss(pred, gt, frame_range) + w.lambda_giou * giou_loss(
        pred, gt, frame_range
    )


def space_loss_grad(
    pred: Tube,
    gt: Tube,
    w: LossWeights = LossWeights(),
    frame_range: tuple[int, int] | None = None,
) -> np.ndarray:
    """Gradient w.r.t. the predicted boxes in range, shape ``(frames, 4)``."""
    return w.lambda_l1 * l1_loss_grad(pred, gt, frame_range) + w.lambda_giou * giou_loss_grad(
        pred, gt, frame_range
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def time_loss(batch: TokenBatch) -> float:
    """Token-level cross-entropy averaged over generation steps."""
    if not batch.targets:
        raise ValueError("empty token batch")
    logp = _log_softmax(batch.logits)
    nll = -logp[np.arange(len(batch.targets)), batch.targets]
    return float(math.fsum(nll) / len(nll))


def time_loss_grad(batch: TokenBatch) -> np.ndarray:
    if not batch.targets:
        raise ValueError("empty token batch")
    probs = np.exp(_log_softmax(batch.logits))
    probs[np.arange(len(batch.targets)), batch.targets] -= 1.0
    return probs / len(batch.targets)


def total_loss(time: float, space: float, w: LossWeights = LossWeights()) -> float:
    if not (math.isfinite(time) and math.isfinite(space)):
        raise ValueError(f"non-finite loss terms time={time}, space={space}")
    return w.lambda_time * time + w.lambda_space * space


def numeric_gradient(
    f: Callable[[np.ndarray], float], x: Sequence[float] | np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        f_plus = float(f(x.copy()))
        x[i] = orig - eps
        f_minus = float(f(x.copy()))
        x[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n)) / scale
