"""Box and interval primitives.

Boxes are stored in normalized center format ``(cx, cy, w, h)``, every
coordinate a fraction of the frame size. Corner form ``(x1, y1, x2, y2)`` is
used internally for overlap arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

Corners = tuple[float, float, float, float]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized center format.

    Construction does not validate ranges so that out-of-frame predictions
    can be represented and then passed through :func:`clamp_box`.
    """

    cx: float
    cy: float
    w: float
    h: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    @classmethod
    def from_seq(cls, values: Sequence[float]) -> BBox:
        if len(values) != 4:
            raise ValueError(f"box needs 4 values, got {len(values)}")
        return cls(*(float(v) for v in values))

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_tuple())

    def is_normalized(self) -> bool:
        return self.is_finite() and all(0.0 <= v <= 1.0 for v in self.as_tuple())


@dataclass(frozen=True)
class TimeSpan:
    """Closed time interval ``[start_s, end_s]`` in seconds."""

    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValueError(f"non-finite span ({self.start_s}, {self.end_s})")
        if self.start_s < 0:
            raise ValueError(f"span start must be >= 0, got {self.start_s}")
        if self.end_s < self.start_s:
            raise ValueError(f"span end {self.end_s} precedes start {self.start_s}")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def clip(self, lo: float, hi: float) -> TimeSpan:
        start = min(max(self.start_s, lo), hi)
        end = min(max(self.end_s, lo), hi)
        return TimeSpan(start, max(start, end))


@dataclass(frozen=True)
class Tube:
    """Boxes over consecutive frames; ``boxes[k]`` belongs to ``start_frame + k``."""

    start_frame: int
    boxes: tuple[BBox, ...]

    def __init__(self, start_frame: int, boxes: Sequence[BBox]):
        if start_frame < 0:
            raise ValueError(f"start_frame must be >= 0, got {start_frame}")
        if len(boxes) == 0:
            raise ValueError("tube needs at least one box")
        object.__setattr__(self, "start_frame", int(start_frame))
        object.__setattr__(self, "boxes", tuple(boxes))

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.boxes) - 1

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.end_frame + 1)

    def __len__(self) -> int:
        return len(self.boxes)

    def __contains__(self, frame: object) -> bool:
        return isinstance(frame, int) and self.start_frame <= frame <= self.end_frame

    def __iter__(self) -> Iterator[tuple[int, BBox]]:
        return iter(zip(self.frames, self.boxes))

    def box_at(self, frame: int) -> BBox:
        if frame not in self:
            raise KeyError(f"frame {frame} outside tube [{self.start_frame}, {self.end_frame}]")
        return self.boxes[frame - self.start_frame]

    def restrict(self, first: int, last: int) -> Tube:
        """Sub-tube over ``[first, last]``; both ends must lie inside the tube."""
        if first > last or first not in self or last not in self:
            raise ValueError(
                f"range [{first}, {last}] not inside tube [{self.start_frame}, {self.end_frame}]"
            )
        lo = first - self.start_frame
        return Tube(first, self.boxes[lo : lo + (last - first) + 1])


def box_area(b: BBox) -> float:
    return max(0.0, b.w) * max(0.0, b.h)


def to_corners(b: BBox) -> Corners:
    return (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0)


def from_corners(x1: float, y1: float, x2: float, y2: float) -> BBox:
    if x2 < x1 or y2 < y1:
        raise ValueError(f"inverted corners ({x1}, {y1}, {x2}, {y2})")
    return BBox((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


def _inside(b: BBox) -> bool:
    return all(0.0 <= v <= 1.0 for v in to_corners(b)) and b.w >= 0.0 and b.h >= 0.0


def clamp_box(b: BBox) -> BBox:
    """Clamp the corners of ``b`` to the unit frame.

    A box lying fully outside collapses to a zero-area box on the border.
    Boxes already inside are returned unchanged, which makes the operation
    idempotent.
    """
    if not b.is_finite():
        raise ValueError(f"non-finite box {b.as_tuple()}")
    # center/size round trips can leave a corner one ulp outside; iterate
    for _ in range(16):
        if _inside(b):
            return b
        x1, y1, x2, y2 = (min(max(v, 0.0), 1.0) for v in to_corners(b))
        b = from_corners(x1, y1, max(x1, x2), max(y1, y2))
    while not _inside(b):
        b = BBox(b.cx, b.cy, math.nextafter(b.w, 0.0), math.nextafter(b.h, 0.0))
    return b


def _corner_area(c: Corners) -> float:
    return max(0.0, c[2] - c[0]) * max(0.0, c[3] - c[1])


def _overlap(a: Corners, b: Corners) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def _degenerate_pair(a: BBox, b: BBox) -> float | None:
    """IoU convention for zero-area boxes, or None when both have area."""
    if box_area(a) > 0.0 and box_area(b) > 0.0:
        return None
    if box_area(a) == 0.0 and box_area(b) == 0.0 and a == b:
        return 1.0
    return 0.0


def box_iou(a: BBox, b: BBox) -> float:
    degenerate = _degenerate_pair(a, b)
    if degenerate is not None:
        return degenerate
    ca, cb = to_corners(a), to_corners(b)
    inter = _overlap(ca, cb)
    # corner-derived areas keep identical boxes at exactly 1
    union = _corner_area(ca) + _corner_area(cb) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_giou(a: BBox, b: BBox) -> float:
    """Generalized IoU: IoU minus the empty fraction of the enclosing box."""
    degenerate = _degenerate_pair(a, b)
    if degenerate is not None:
        return degenerate
    ca, cb = to_corners(a), to_corners(b)
    inter = _overlap(ca, cb)
    union = _corner_area(ca) + _corner_area(cb) - inter
    enclose = (max(ca[2], cb[2]) - min(ca[0], cb[0])) * (max(ca[3], cb[3]) - min(ca[1], cb[1]))
    # rounding can push enclose a hair below union when one box holds the other
    return inter / union - max(0.0, enclose - union) / enclose


def temporal_iou(a: TimeSpan, b: TimeSpan) -> float:
    inter = min(a.end_s, b.end_s) - max(a.start_s, b.start_s)
    union = max(a.end_s, b.end_s) - min(a.start_s, b.start_s)
    if union <= 0.0:
        # both zero-length: equal points overlap fully
        return 1.0 if a == b else 0.0
    if inter <= 0.0:
        return 0.0
    return inter / union
