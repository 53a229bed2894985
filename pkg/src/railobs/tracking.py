"""Sliding-window, recency-weighted smoothing of per-track distances."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

WINDOW_SIZES = (1, 5, 17, 29, 51)


def recency_weights(m: int, scheme: str = "linear", decay: float = 0.8) -> np.ndarray:
    """Weights for ``m`` entries ordered oldest to newest."""
    j = np.arange(1, m + 1, dtype=np.float64)
    if scheme == "linear":
        return j
    if scheme == "exponential":
        return decay ** (m - j)
    raise ValueError(f"unknown weight scheme {scheme!r}")


@dataclass
class TrackWindow:
    track_id: int
    size: int
    staleness: int | None = None
    scheme: str = "linear"
    entries: deque = field(default_factory=deque)
    last_frame: int | None = None
    last_filtered: float | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("window size must be at least 1")
        if self.staleness is None:
            self.staleness = 2 * self.size
        self.entries = deque(self.entries, maxlen=self.size)

    def update_and_filter(self, frame_index: int, distance_m: float | None) -> float | None:
        if self.last_frame is not None and frame_index <= self.last_frame:
            raise ValueError(
                f"track {self.track_id}: frame {frame_index} not after last frame {self.last_frame}")
        if distance_m is None:
            return self.last_filtered
        self.last_frame = frame_index
        self.entries.append((frame_index, float(distance_m)))
        while self.entries and frame_index - self.entries[0][0] >= max(self.staleness, 1):
            self.entries.popleft()
        d = np.array([e[1] for e in self.entries])
        w = recency_weights(len(d), self.scheme)
        self.last_filtered = float((w * d).sum() / w.sum())
        return self.last_filtered


class TemporalFilter:
    """Per-track windows; records without a track id bypass filtering."""

    def __init__(self, window: int = 1, staleness: int | None = None, scheme: str = "linear"):
        self.window = window
        self.staleness = 2 * window if staleness is None else staleness
        self.scheme = scheme
        self.tracks: dict[int, TrackWindow] = {}

    def update(self, track_id: int | None, frame_index: int, distance_m: float | None) -> float | None:
        if track_id is None:
            return distance_m
        tw = self.tracks.get(track_id)
        if tw is None:
            tw = self.tracks[track_id] = TrackWindow(track_id, self.window, self.staleness, self.scheme)
        return tw.update_and_filter(frame_index, distance_m)

    def prune(self, current_frame: int) -> None:
        self.tracks = prune_stale(self.tracks, current_frame, self.staleness)


def prune_stale(tracks: dict[int, TrackWindow], current_frame: int, horizon: int) -> dict[int, TrackWindow]:
    """Drop tracks whose last update is ``horizon`` or more frames old."""
    return {tid: tw for tid, tw in tracks.items()
            if tw.last_frame is not None and current_frame - tw.last_frame < horizon}
