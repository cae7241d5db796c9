"""Frame grids, time instructions and span/frame conversions."""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass
from typing import Sequence

from .geometry import TimeSpan


class SpanParseError(ValueError):
    """Span text did not match ``from {a}s to {b}s``."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class FrameGrid:
    duration_s: float
    timestamps: tuple[float, ...]

    def __init__(self, duration_s: float, timestamps: Sequence[float]):
        ts = tuple(float(t) for t in timestamps)
        if not ts:
            raise ValueError("frame grid is empty")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timestamps must be strictly increasing")
        if ts[0] < 0 or ts[-1] > duration_s:
            raise ValueError(f"timestamps must lie within [0, {duration_s}]")
        object.__setattr__(self, "duration_s", float(duration_s))
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, index: int) -> float:
        return self.timestamps[index]

    def nearest_index(self, t: float) -> int:
        """Index of the grid timestamp closest to ``t``; ties go to the earlier one."""
        ts = self.timestamps
        hi = bisect.bisect_left(ts, t)
        if hi == 0:
            return 0
        if hi == len(ts):
            return len(ts) - 1
        lo = hi - 1
        return lo if t - ts[lo] <= ts[hi] - t else hi


def sample_frames(duration_s: float, n_frames: int) -> FrameGrid:
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    if n_frames < 1:
        raise ValueError(f"need at least one frame, got {n_frames}")
    step = duration_s / n_frames
    # round() keeps exact binary halves on the even side: 20/64 -> 0.31
    ts = [round(i * step, 2) for i in range(n_frames)]
    try:
        return FrameGrid(duration_s, ts)
    except ValueError as exc:
        raise ValueError(
            f"{n_frames} frames over {duration_s}s collide at 0.01s resolution"
        ) from exc


def _fmt_seconds(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.2f}".rstrip("0").rstrip(".")


def time_instruction(grid: FrameGrid) -> str:
    stamps = ",".join(f"{t:.2f}s" for t in grid.timestamps)
    return (
        f"The video lasts for {_fmt_seconds(grid.duration_s)} seconds, and {len(grid)} "
        f"frames are uniformly sampled from it. These frames are located at {stamps}."
    )


_STAMP_RE = re.compile(r"(\d+(?:\.\d+)?)s")


def parse_instruction_timestamps(text: str) -> list[float]:
    """Recover the frame timestamps listed in a time instruction."""
    marker = "located at "
    at = text.find(marker)
    if at < 0:
        raise ValueError("not a time instruction")
    return [float(m) for m in _STAMP_RE.findall(text[at + len(marker) :])]


def snap_span(span: TimeSpan, grid: FrameGrid) -> TimeSpan:
    """Move both endpoints to their nearest grid timestamp."""
    start = grid[grid.nearest_index(span.start_s)]
    end = grid[grid.nearest_index(span.end_s)]
    return TimeSpan(start, end)


def timespan_to_frame_range(span: TimeSpan, grid: FrameGrid) -> tuple[int, int]:
    ts = grid.timestamps
    first = bisect.bisect_left(ts, span.start_s)
    last = bisect.bisect_right(ts, span.end_s) - 1
    if first > last:
        mid = grid.nearest_index((span.start_s + span.end_s) / 2.0)
        return mid, mid
    return first, last


def frame_range_to_timespan(first: int, last: int, grid: FrameGrid) -> TimeSpan:
    return TimeSpan(grid[first], grid[last])


_SPAN_RE = re.compile(r"from\s+(\d+(?:\.\d+)?)s\s+to\s+(\d+(?:\.\d+)?)s")


def parse_span_text(text: str) -> TimeSpan:
    m = _SPAN_RE.search(text)
    if m is None:
        at = text.find("from")
        raise SpanParseError(f"expected 'from <a>s to <b>s' in {text!r}", max(at, 0))
    start, end = float(m.group(1)), float(m.group(2))
    if start > end:
        raise SpanParseError(f"span start {start} exceeds end {end}", m.start(2))
    return TimeSpan(start, end)


def format_span_text(span: TimeSpan) -> str:
    return f"from {span.start_s:.2f}s to {span.end_s:.2f}s"
