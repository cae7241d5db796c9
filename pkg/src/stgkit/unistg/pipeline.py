"""Caption-to-tube data synthesis: analyze, annotate, refine, filter."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..geometry import BBox, TimeSpan, Tube, box_area, clamp_box, from_corners
from ..sequencing import (
    FrameGrid,
    sample_frames,
    snap_span,
    time_instruction,
    timespan_to_frame_range,
)
from .services import ANALYZE, DETECT, ServiceClient, ServiceProtocolError

log = logging.getLogger(__name__)


class Rejection(str, Enum):
    NO_OBJECT = "NoObject"
    NO_DETECTIONS = "NoDetections"
    DURATION_TOO_SHORT = "DurationTooShort"
    DURATION_TOO_LONG = "DurationTooLong"
    COMPLEX_SCENE = "ComplexScene"
    AREA_INSTABILITY = "AreaInstability"


@dataclass(frozen=True)
class CaptionRecord:
    id: str
    video_ref: str
    duration_s: float
    caption: str
    raw_span: TimeSpan

    def __post_init__(self) -> None:
        if self.raw_span.end_s > self.duration_s:
            raise ValueError(f"{self.id}: raw span ends after the video")

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> CaptionRecord:
        span = obj["raw_span"]
        return cls(
            id=str(obj["id"]),
            video_ref=str(obj["video_ref"]),
            duration_s=float(obj["duration_s"]),
            caption=str(obj["caption"]),
            raw_span=TimeSpan(float(span["start_s"]), float(span["end_s"])),
        )


@dataclass(frozen=True)
class Detection:
    frame_index: int
    box: BBox
    score: float
    label: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class SynthesisConfig:
    conf_threshold: float = 0.3
    max_boxes_per_frame: int = 3
    area_ratio_low: float = 0.5
    area_ratio_high: float = 2.0
    min_duration_s: float = 2.0
    max_duration_s: float = 120.0
    n_frames: int = 64
    max_in_flight_requests: int = 1
    mock_fixture_path: str | None = None
    analyzer_url: str = "http://localhost:8001"
    detector_url: str = "http://localhost:8002"
    timeout_s: float = 30.0
    retries: int = 2

    def __post_init__(self) -> None:
        if not 0 < self.area_ratio_low < 1 < self.area_ratio_high:
            raise ValueError("area ratio bounds must satisfy 0 < low < 1 < high")
        if not self.min_duration_s < self.max_duration_s:
            raise ValueError("min_duration_s must be below max_duration_s")
        if self.n_frames < 1 or self.max_in_flight_requests < 1:
            raise ValueError("n_frames and max_in_flight_requests must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SynthesisConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        return cls(**data)


@dataclass(frozen=True)
class SynthesisOutcome:
    id: str
    record: dict[str, Any] | None = None
    rejection: Rejection | None = None

    def __post_init__(self) -> None:
        if (self.record is None) == (self.rejection is None):
            raise ValueError("outcome must hold exactly one of record or rejection")


def extract_objects(caption: str, client: ServiceClient) -> list[str]:
    """Localizable object phrases in ``caption``, subject first."""
    if not caption.strip():
        raise ValueError("empty caption")
    resp = client.call(ANALYZE, {"caption": caption})
    objects = resp.get("objects")
    if not isinstance(objects, list) or not all(isinstance(o, str) for o in objects):
        raise ServiceProtocolError(f"analyzer response lacks a string list 'objects': {resp}")
    return [o.strip() for o in objects if o.strip()]


def _parse_detection(frame_index: int, raw: Any) -> Detection:
    try:
        x1, y1, x2, y2 = (float(v) for v in raw["box_xyxy"])
        score = float(raw["score"])
        label = str(raw.get("label", ""))
        box = clamp_box(from_corners(x1, y1, x2, y2))
        return Detection(frame_index, box, score, label)
    except (KeyError, TypeError, ValueError) as exc:
        raise ServiceProtocolError(f"bad detection on frame {frame_index}: {raw!r}") from exc


def annotate_boxes(
    video_ref: str,
    frame_indices: Iterable[int],
    prompt: str,
    client: ServiceClient,
    cfg: SynthesisConfig = SynthesisConfig(),
) -> dict[int, list[Detection]]:
    """Detections per frame, dropping those scoring below the confidence threshold."""
    if not prompt.strip():
        raise ValueError("empty detector prompt")
    out: dict[int, list[Detection]] = {}
    for f in frame_indices:
        resp = client.call(DETECT, {"video_ref": video_ref, "frame_index": f, "prompt": prompt})
        raw = resp.get("detections")
        if not isinstance(raw, list):
            raise ServiceProtocolError(f"detector response lacks 'detections' list: {resp}")
        dets = [_parse_detection(f, d) for d in raw]
        out[f] = [d for d in dets if d.score >= cfg.conf_threshold]
    return out


def _duration_gate(span: TimeSpan, cfg: SynthesisConfig) -> Rejection | None:
    if span.duration < cfg.min_duration_s:
        return Rejection.DURATION_TOO_SHORT
    if span.duration > cfg.max_duration_s:
        return Rejection.DURATION_TOO_LONG
    return None


def refine_time_boundary(
    frames: Sequence[tuple[float, Sequence[Detection]]],
    raw_span: TimeSpan,
    cfg: SynthesisConfig = SynthesisConfig(),
) -> TimeSpan | Rejection:
    """Shrink ``raw_span`` to the first/last frame timestamps that have a detection.

    ``frames`` pairs each frame timestamp with its kept detections.
    """
    hits = [t for t, dets in frames if dets and raw_span.start_s <= t <= raw_span.end_s]
    if not hits:
        return Rejection.NO_DETECTIONS
    span = TimeSpan(min(hits), max(hits))
    return _duration_gate(span, cfg) or span


def _best(dets: Sequence[Detection]) -> Detection:
    # highest score, then larger area, then earliest in detector order
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, -box_area(dets[i].box), i))
    return dets[order[0]]


def filter_boxes(
    per_frame: Sequence[tuple[int, Sequence[Detection]]],
    cfg: SynthesisConfig = SynthesisConfig(),
) -> Tube | Rejection:
    """Turn per-frame detections into a one-box-per-frame tube.

    Frames with more than ``max_boxes_per_frame`` detections are dropped as
    complex scenes; the rest keep their best box. Consecutive kept boxes
    must stay within the area-ratio bounds or the sample is rejected. Frames
    left without a box inside the tube repeat the previous kept box.
    """
    if not any(dets for _, dets in per_frame):
        return Rejection.NO_DETECTIONS
    kept: list[tuple[int, BBox]] = []
    for frame, dets in sorted(per_frame, key=lambda fd: fd[0]):
        if len(dets) > cfg.max_boxes_per_frame:
            log.debug("frame %d: %d boxes, dropped as complex scene", frame, len(dets))
            continue
        if dets:
            kept.append((frame, _best(dets).box))
    if not kept:
        return Rejection.COMPLEX_SCENE
    for (_, prev), (_, cur) in zip(kept, kept[1:]):
        prev_area, cur_area = box_area(prev), box_area(cur)
        if prev_area <= 0.0:
            return Rejection.AREA_INSTABILITY
        ratio = cur_area / prev_area
        if ratio < cfg.area_ratio_low or ratio > cfg.area_ratio_high:
            return Rejection.AREA_INSTABILITY
    boxes: list[BBox] = []
    lookup = dict(kept)
    for frame in range(kept[0][0], kept[-1][0] + 1):
        boxes.append(lookup.get(frame, boxes[-1] if boxes else kept[0][1]))
    return Tube(kept[0][0], boxes)


def _grid_frames_in(span: TimeSpan, grid: FrameGrid) -> list[int]:
    first, last = timespan_to_frame_range(span, grid)
    return list(range(first, last + 1))


def tube_to_json(tube: Tube) -> dict[str, Any]:
    return {"start_frame": tube.start_frame, "boxes": [list(b.as_tuple()) for b in tube.boxes]}


def synthesize_record(
    rec: CaptionRecord, client: ServiceClient, cfg: SynthesisConfig = SynthesisConfig()
) -> SynthesisOutcome:
    def reject(reason: Rejection) -> SynthesisOutcome:
        log.info("%s rejected: %s", rec.id, reason.value)
        return SynthesisOutcome(rec.id, rejection=reason)

    objects = extract_objects(rec.caption, client)
    if not objects:
        return reject(Rejection.NO_OBJECT)

    grid = sample_frames(rec.duration_s, cfg.n_frames)
    frames = _grid_frames_in(rec.raw_span, grid)
    detections: dict[int, list[Detection]] = {}
    for obj in objects:
        detections = annotate_boxes(rec.video_ref, frames, obj, client, cfg)
        if any(detections.values()):
            break
    else:
        return reject(Rejection.NO_DETECTIONS)

    refined = refine_time_boundary([(grid[f], detections[f]) for f in frames], rec.raw_span, cfg)
    if isinstance(refined, Rejection):
        return reject(refined)

    in_span = [f for f in frames if refined.start_s <= grid[f] <= refined.end_s]
    tube = filter_boxes([(f, detections[f]) for f in in_span], cfg)
    if isinstance(tube, Rejection):
        return reject(tube)

    # complex-scene drops can trim the ends; the span must follow the tube
    span = snap_span(TimeSpan(grid[tube.start_frame], grid[tube.end_frame]), grid)
    gate = _duration_gate(span, cfg)
    if gate is not None:
        return reject(gate)

    return SynthesisOutcome(
        rec.id,
        record={
            "id": rec.id,
            "video_ref": rec.video_ref,
            "duration_s": rec.duration_s,
            "caption": rec.caption,
            "span": {"start_s": span.start_s, "end_s": span.end_s},
            "tube": tube_to_json(tube),
            "instruction": time_instruction(grid),
        },
    )


@dataclass
class SynthesisStats:
    total: int = 0
    emitted: int = 0
    rejections: dict[str, int] = field(default_factory=lambda: {r.value: 0 for r in Rejection})

    @property
    def rejected(self) -> int:
        return sum(self.rejections.values())

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.total if self.total else 0.0

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["rejected"] = self.rejected
        d["rejection_rate"] = self.rejection_rate
        return d


def synthesize_dataset(
    corpus: Sequence[CaptionRecord],
    client: ServiceClient,
    cfg: SynthesisConfig = SynthesisConfig(),
) -> tuple[list[SynthesisOutcome], SynthesisStats]:
    """Run every record through the pipeline; outcomes keep corpus order."""
    if cfg.max_in_flight_requests == 1:
        outcomes = [synthesize_record(r, client, cfg) for r in corpus]
    else:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight_requests) as pool:
            outcomes = list(pool.map(lambda r: synthesize_record(r, client, cfg), corpus))
    counts = Counter(o.rejection.value for o in outcomes if o.rejection is not None)
    stats = SynthesisStats(total=len(outcomes), emitted=sum(o.record is not None for o in outcomes))
    stats.rejections.update(counts)
    return outcomes, stats


def write_outputs(
    outcomes: Sequence[SynthesisOutcome],
    stats: SynthesisStats,
    out_path: str | Path,
    stats_path: str | Path | None = None,
) -> None:
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for o in outcomes:
            if o.record is not None:
                fh.write(json.dumps(o.record, ensure_ascii=False) + "\n")
    if stats_path is not None:
        with open(stats_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def check_record(record: dict[str, Any], cfg: SynthesisConfig = SynthesisConfig()) -> list[str]:
    """Invariant violations in an emitted record; empty when it is clean."""
    problems = []
    duration = record["span"]["end_s"] - record["span"]["start_s"]
    if not cfg.min_duration_s <= duration <= cfg.max_duration_s:
        problems.append(f"span duration {duration:.2f}s outside gate")
    boxes = [BBox.from_seq(b) for b in record["tube"]["boxes"]]
    if not all(b.is_normalized() for b in boxes):
        problems.append("box outside normalized range")
    for prev, cur in zip(boxes, boxes[1:]):
        if box_area(prev) <= 0 or not (
            cfg.area_ratio_low <= box_area(cur) / box_area(prev) <= cfg.area_ratio_high
        ):
            problems.append("adjacent area ratio out of bounds")
            break
    if not all(math.isfinite(v) for b in boxes for v in b.as_tuple()):
        problems.append("non-finite box")
    return problems
