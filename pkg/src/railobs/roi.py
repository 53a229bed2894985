"""Track-mask region of interest and obstacle flagging."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .formats import FormatError, InstanceMask

DEFAULT_EXPANSION = 0.25
DEFAULT_MIN_AREA_FRACTION = 0.5
DEFAULT_HORIZON = 30


def row_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """Maximal foreground runs of a 1-D bool row as half-open ``(start, stop)`` pairs."""
    padded = np.concatenate([[False], np.asarray(row, bool), [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def expand_track_mask(track: InstanceMask, p: float = DEFAULT_EXPANSION) -> InstanceMask:
    """Widen every run of width ``w`` by ``round(p * w)`` pixels on each side.

    Rounding is half-up; runs are clipped to the image and merge on overlap.
    """
    if p < 0:
        raise ValueError("expansion factor must be non-negative")
    data = track.data
    if p == 0 or not data.any():
        return track.with_data(data.copy())
    h, w = data.shape
    # run boundaries for every row at once
    padded = np.zeros((h, w + 2), bool)
    padded[:, 1:-1] = data
    diff = np.diff(padded.astype(np.int8), axis=1)
    r_start, c_start = np.nonzero(diff == 1)
    r_stop, c_stop = np.nonzero(diff == -1)
    # np.nonzero is row-major, so starts and stops pair up in order
    ext = np.floor(p * (c_stop - c_start) + 0.5).astype(np.int64)
    lo = np.maximum(c_start - ext, 0)
    hi = np.minimum(c_stop + ext, w)
    delta = np.zeros((h, w + 1), np.int32)
    np.add.at(delta, (r_start, lo), 1)
    np.add.at(delta, (r_stop, hi), -1)
    out = np.cumsum(delta, axis=1)[:, :w] > 0
    return track.with_data(out)


def is_row_connected(mask: np.ndarray) -> bool:
    """Occupied rows are contiguous and runs of neighbouring rows touch or overlap."""
    rows = np.flatnonzero(mask.any(axis=1))
    if len(rows) == 0:
        return False
    if rows[-1] - rows[0] + 1 != len(rows):
        return False
    prev = row_runs(mask[rows[0]])
    for y in rows[1:]:
        cur = row_runs(mask[y])
        if not any(a0 <= b1 and b0 <= a1 for a0, a1 in prev for b0, b1 in cur):
            return False
        prev = cur
    return True


@dataclass(frozen=True)
class TrackMaskState:
    last_valid: InstanceMask | None = None
    last_valid_frame: int | None = None
    recent_areas: tuple[int, ...] = ()
    min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION
    horizon: int = DEFAULT_HORIZON

    @property
    def reference_area(self) -> float | None:
        return float(np.median(self.recent_areas)) if self.recent_areas else None


def is_valid_track_mask(track: InstanceMask, state: TrackMaskState) -> bool:
    area = track.area
    if area == 0:
        return False
    ref = state.reference_area
    if ref is not None and area < state.min_area_fraction * ref:
        return False
    return is_row_connected(track.data)


def validate_track_mask(track: InstanceMask, state: TrackMaskState,
                        frame_index: int | None = None) -> tuple[InstanceMask, TrackMaskState, bool]:
    """Return the mask to use this frame, the updated state, and whether the fallback fired."""
    if is_valid_track_mask(track, state):
        areas = (state.recent_areas + (track.area,))[-state.horizon:]
        return track, replace(state, last_valid=track, last_valid_frame=frame_index,
                              recent_areas=areas), False
    if state.last_valid is not None:
        return state.last_valid, state, True
    return track, state, False


def discriminate_obstacle(obj: InstanceMask, expanded_track: InstanceMask) -> bool:
    if obj.data.shape != expanded_track.data.shape:
        raise FormatError(f"mask size mismatch: {obj.data.shape} vs {expanded_track.data.shape}")
    return bool(np.any(obj.data & expanded_track.data))
