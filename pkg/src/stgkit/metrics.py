"""STVG, VTG and REC evaluation metrics.

All dataset-level means are reduced with :func:`math.fsum` so the result does
not depend on sample order or platform.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geometry import BBox, TimeSpan, Tube, box_iou, clamp_box, temporal_iou

DEFAULT_VIOU_THRESHOLDS = (0.3, 0.5)
DEFAULT_RECALL_THRESHOLDS = (0.5, 0.7)


class EvaluationError(ValueError):
    pass


class IdMismatchError(EvaluationError):
    """Predictions and ground truth disagree on sample ids."""

    def __init__(self, message: str, ids: Sequence[str] = ()):
        super().__init__(message)
        self.ids = list(ids)


@dataclass(frozen=True)
class GroundingSample:
    id: str
    duration_s: float
    caption: str
    gt_span: TimeSpan
    gt_tube: Tube
    frame_timestamps: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.gt_span.end_s > self.duration_s:
            raise ValueError(f"{self.id}: gt span ends after the video ({self.duration_s}s)")
        if self.gt_tube.end_frame >= len(self.frame_timestamps):
            raise ValueError(
                f"{self.id}: gt tube frame {self.gt_tube.end_frame} outside grid "
                f"of {len(self.frame_timestamps)} frames"
            )


@dataclass(frozen=True)
class Prediction:
    id: str
    span: TimeSpan
    tube: Tube | None = None


@dataclass
class StvgReport:
    m_tIoU: float
    m_vIoU: float
    vIoU_at: dict[float, float] = field(default_factory=dict)
    n_samples: int = 0

    def to_dict(self, decimals: int = 1) -> dict:
        return {
            "m_tIoU": round(self.m_tIoU, decimals),
            "m_vIoU": round(self.m_vIoU, decimals),
            "vIoU_at": {f"{r:g}": round(v, decimals) for r, v in sorted(self.vIoU_at.items())},
            "n_samples": self.n_samples,
        }

    def format_table(self) -> str:
        cols = ["m_tIoU", "m_vIoU"] + [f"vIoU@{r:g}" for r in sorted(self.vIoU_at)]
        vals = [self.m_tIoU, self.m_vIoU] + [self.vIoU_at[r] for r in sorted(self.vIoU_at)]
        header = " | ".join(f"{c:>9}" for c in cols)
        row = " | ".join(f"{v:>9.1f}" for v in vals)
        return f"{header}\n{row}\n(n={self.n_samples})"


def _mean_percent(values: Iterable[float]) -> float:
    values = list(values)
    if not values:
        return 0.0
    return 100.0 * math.fsum(values) / len(values)


def viou(pred: Prediction, gt: GroundingSample) -> float:
    """Mean per-frame box IoU over the union of predicted and GT frames."""
    if pred.id != gt.id:
        raise IdMismatchError(f"prediction {pred.id!r} scored against {gt.id!r}", [pred.id, gt.id])
    if pred.tube is None:
        return 0.0
    n_grid = len(gt.frame_timestamps)
    if pred.tube.end_frame >= n_grid:
        raise EvaluationError(
            f"{pred.id}: predicted frame {pred.tube.end_frame} outside grid of {n_grid} frames"
        )
    pf, gf = set(pred.tube.frames), set(gt.gt_tube.frames)
    union = pf | gf
    if not union:
        return 0.0
    ious = [
        box_iou(clamp_box(pred.tube.box_at(t)), clamp_box(gt.gt_tube.box_at(t)))
        for t in sorted(pf & gf)
    ]
    return math.fsum(ious) / len(union)


def _check_ids(pred_ids: Sequence[str], gt_ids: Sequence[str]) -> None:
    counts = Counter(pred_ids)
    dupes = sorted(i for i, c in counts.items() if c > 1)
    missing = sorted(set(gt_ids) - set(counts))
    extra = sorted(set(counts) - set(gt_ids))
    problems = []
    if dupes:
        problems.append(f"duplicate prediction ids {dupes}")
    if missing:
        problems.append(f"missing predictions for {missing}")
    if extra:
        problems.append(f"predictions without ground truth {extra}")
    if problems:
        raise IdMismatchError("; ".join(problems), dupes + missing + extra)


def evaluate_stvg(
    preds: Sequence[Prediction],
    gts: Sequence[GroundingSample],
    thresholds: Sequence[float] = DEFAULT_VIOU_THRESHOLDS,
) -> StvgReport:
    _check_ids([p.id for p in preds], [g.id for g in gts])
    by_id = {p.id: p for p in preds}
    tious, vious = [], []
    for gt in gts:
        pred = by_id[gt.id]
        span = pred.span.clip(0.0, gt.duration_s)
        tious.append(temporal_iou(span, gt.gt_span))
        vious.append(viou(pred, gt))
    n = len(gts)
    at = {
        float(r): (100.0 * sum(1 for v in vious if v > r) / n if n else 0.0)
        for r in thresholds
    }
    return StvgReport(
        m_tIoU=_mean_percent(tious), m_vIoU=_mean_percent(vious), vIoU_at=at, n_samples=n
    )


def rec_accuracy(
    pred_boxes: Sequence[BBox], gt_boxes: Sequence[BBox], threshold: float = 0.5
) -> float:
    if len(pred_boxes) != len(gt_boxes):
        raise EvaluationError(f"{len(pred_boxes)} predictions for {len(gt_boxes)} targets")
    if not gt_boxes:
        raise EvaluationError("no boxes to evaluate")
    hits = sum(
        1 for p, g in zip(pred_boxes, gt_boxes) if box_iou(clamp_box(p), clamp_box(g)) >= threshold
    )
    return 100.0 * hits / len(gt_boxes)


def recall_at_1(
    pred_spans: Sequence[TimeSpan],
    gt_spans: Sequence[TimeSpan],
    thresholds: Sequence[float] = DEFAULT_RECALL_THRESHOLDS,
) -> dict[float, float]:
    if len(pred_spans) != len(gt_spans):
        raise EvaluationError(f"{len(pred_spans)} predictions for {len(gt_spans)} targets")
    if not gt_spans:
        raise EvaluationError("no spans to evaluate")
    tious = [temporal_iou(p, g) for p, g in zip(pred_spans, gt_spans)]
    return {
        float(m): 100.0 * sum(1 for t in tious if t >= m) / len(tious) for m in thresholds
    }
