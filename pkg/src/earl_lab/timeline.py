"""Frame axis of a synthetic video: budgeted uniform sampling and localized re-sampling.

All frame positions are integer indices into the original video, ``0 .. M-1``.
Every function here is pure.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContextTooSmall,
    EmptySelection,
    KeyNotInContext,
    SelectionOutsideContext,
)


@dataclass(frozen=True, eq=False)
class VideoTimeline:
    """Original frame axis with one observable evidence signal per frame."""

    frame_count: int
    signals: np.ndarray

    def __post_init__(self):
        signals = np.asarray(self.signals, dtype=float)
        if self.frame_count < 2:
            raise ValueError(f"frame_count must be >= 2, got {self.frame_count}")
        if signals.shape != (self.frame_count,):
            raise ValueError(
                f"expected {self.frame_count} signals, got shape {signals.shape}"
            )
        if signals.size and (signals.min() < 0.0 or signals.max() > 1.0):
            raise ValueError("signals must lie in [0, 1]")
        signals.setflags(write=False)
        object.__setattr__(self, "signals", signals)

    def __eq__(self, other):
        if not isinstance(other, VideoTimeline):
            return NotImplemented
        return self.frame_count == other.frame_count and np.array_equal(
            self.signals, other.signals
        )

    __hash__ = None


@dataclass(frozen=True)
class VisualContext:
    """The frames currently visible to the policy (strictly increasing indices)."""

    frames: tuple

    def __post_init__(self):
        frames = tuple(int(f) for f in self.frames)
        if not frames:
            raise ValueError("visual context must be non-empty")
        for a, b in zip(frames, frames[1:]):
            if a >= b:
                raise ValueError(f"context frames must be strictly increasing: {frames}")
        if frames[0] < 0:
            raise ValueError(f"negative frame index in context: {frames[0]}")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def of(cls, frames: Iterable[int]) -> "VisualContext":
        """Build a context from any iterable, sorting and deduplicating."""
        return cls(tuple(sorted(set(int(f) for f in frames))))

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __contains__(self, frame):
        i = bisect.bisect_left(self.frames, frame)
        return i < len(self.frames) and self.frames[i] == frame


@dataclass(frozen=True)
class Interval:
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"interval needs lo < hi, got ({self.lo}, {self.hi})")

    @property
    def length(self) -> int:
        return self.hi - self.lo

    @property
    def capacity(self) -> int:
        """Number of interior indices, i.e. frames strictly between the endpoints."""
        return self.hi - self.lo - 1

    def interior(self) -> range:
        return range(self.lo + 1, self.hi)


def uniform_sample(timeline: VideoTimeline, budget: int) -> VisualContext:
    """Return ``min(budget, M)`` evenly strided frames starting at frame 0."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    m = timeline.frame_count if isinstance(timeline, VideoTimeline) else int(timeline)
    if m <= budget:
        return VisualContext(tuple(range(m)))
    return VisualContext.of(k * m // budget for k in range(budget))


def nearest_neighbor_interval(context: VisualContext, key: int) -> Interval:
    """Interval between ``key`` and its closest neighbour in ``context``.

    Equidistant neighbours resolve to the later one.
    """
    frames = context.frames
    if len(frames) < 2:
        raise ContextTooSmall(f"need at least 2 context frames, got {len(frames)}")
    i = bisect.bisect_left(frames, key)
    if i == len(frames) or frames[i] != key:
        raise KeyNotInContext(f"frame {key} is not in the visual context")
    if i == 0:
        return Interval(key, frames[1])
    if i == len(frames) - 1:
        return Interval(frames[i - 1], key)
    prev, nxt = frames[i - 1], frames[i + 1]
    if key - prev < nxt - key:
        return Interval(prev, key)
    return Interval(key, nxt)


def merge_intervals(intervals: Iterable[Interval]) -> list:
    """Merge intervals that overlap by more than a shared endpoint."""
    merged = []
    for iv in sorted(intervals, key=lambda iv: (iv.lo, iv.hi)):
        if merged and iv.lo < merged[-1].hi:
            last = merged[-1]
            if iv.hi > last.hi:
                merged[-1] = Interval(last.lo, iv.hi)
        else:
            merged.append(iv)
    return merged


def allocate_slots(intervals: Sequence[Interval], n_max: int) -> list:
    """Split ``n_max`` sample slots across intervals in proportion to their length.

    Slots sum to ``min(n_max, total capacity)`` and no interval gets more slots than
    it has interior frames. When there are enough slots, each interval with any
    interior frame first receives one; the rest follow the largest-remainder method
    (ties go to the earlier interval), refilling from intervals that hit capacity.
    """
    caps = [iv.capacity for iv in intervals]
    slots = [0] * len(intervals)
    budget = min(n_max, sum(caps))
    open_ = [i for i, c in enumerate(caps) if c > 0]
    if budget >= len(open_):
        for i in open_:
            slots[i] = 1
        budget -= len(open_)
    while budget > 0:
        open_ = [i for i in open_ if slots[i] < caps[i]]
        weights = [intervals[i].length for i in open_]
        total_w = sum(weights)
        # integer quotas and remainders, exact: budget * w / total_w
        quotas = [budget * w // total_w for w in weights]
        rems = [budget * w % total_w for w in weights]
        extra = budget - sum(quotas)
        order = sorted(range(len(open_)), key=lambda j: (-rems[j], j))
        for j in order[:extra]:
            quotas[j] += 1
        given = 0
        for j, i in enumerate(open_):
            take = min(quotas[j], caps[i] - slots[i])
            slots[i] += take
            given += take
        budget -= given
    return slots


def interior_points(interval: Interval, slots: int) -> list:
    """``slots`` evenly spaced interior indices: ``lo + round((j+1) * L / (slots+1))``.

    Rounding is half-up, done in integer arithmetic.
    """
    length = interval.length
    denom = 2 * (slots + 1)
    return [
        interval.lo + (2 * (j + 1) * length + slots + 1) // denom for j in range(slots)
    ]


def resample_plan(context: VisualContext, selected: Iterable[int], n_max: int):
    """Merged intervals and their slot counts for a selection, after validation."""
    keys = sorted(set(int(k) for k in selected))
    if not keys:
        raise EmptySelection("frame selection must be non-empty")
    missing = [k for k in keys if k not in context]
    if missing:
        raise SelectionOutsideContext(f"selected frames not in context: {missing}")
    if len(context) < 2:
        raise ContextTooSmall(f"need at least 2 context frames, got {len(context)}")
    intervals = merge_intervals(nearest_neighbor_interval(context, k) for k in keys)
    return keys, intervals, allocate_slots(intervals, n_max)


def localized_resample(
    timeline: VideoTimeline,
    context: VisualContext,
    selected: Iterable[int],
    n_max: int,
) -> VisualContext:
    """Replace the context with frames re-sampled around the selected key frames.

    The new context is the selected keys plus up to ``n_max`` interior frames taken
    from the interval between each key and its nearest context neighbour.
    """
    keys, intervals, slots = resample_plan(context, selected, n_max)
    frames = set(keys)
    for iv, s in zip(intervals, slots):
        frames.update(interior_points(iv, s))
    return VisualContext(tuple(sorted(frames)))
