"""Static annotated frames: binary PPM plus a JSON label sidecar.

All blending is integer arithmetic so output bytes are identical across
runs and platforms.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .formats import DistanceRecord, FormatError, FrameBundle, InstanceMask

PALETTE = {
    "person": (220, 20, 60),
    "vehicle": (0, 90, 255),
    "animal": (255, 140, 0),
    "tool": (200, 0, 200),
    "train": (0, 200, 200),
    "other": (180, 180, 180),
    "track": (0, 200, 0),
}
OUTLINE = (255, 255, 0)
BACKGROUND = 96
TRACK_ALPHA = 96   # out of 256
OBJECT_ALPHA = 160


def blend(base: np.ndarray, color, alpha: int) -> np.ndarray:
    c = np.asarray(color, dtype=np.uint16)
    return ((base.astype(np.uint16) * (256 - alpha) + c * alpha) >> 8).astype(np.uint8)


def encode_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("ppm: truncated header")
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError("ppm: only 8-bit binary P6 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(buf, dtype=np.uint8, offset=pos)
    if data.size != w * h * 3:
        raise FormatError("ppm: payload size mismatch")
    return data.reshape(h, w, 3).copy()


def write_ppm(path, data: bytes) -> None:
    Path(path).write_bytes(data)


def outline(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour in the background or off-image."""
    m = np.pad(mask, 1, constant_values=False)
    interior = m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    return mask & ~interior


def annotate_frame(bundle: FrameBundle, records: Sequence[DistanceRecord],
                   expanded_track: InstanceMask | None = None) -> tuple[bytes, dict]:
    """Render the track region, class-coloured masks and obstacle outlines.

    Objects are drawn only when at least one record refers to them. The
    sidecar lists every obstacle with class, score and the first available
    filtered distance (records are taken in the order given).
    """
    h, w = bundle.height, bundle.width
    if bundle.image is not None:
        img = decode_ppm(Path(bundle.image).read_bytes())
        if img.shape[:2] != (h, w):
            raise FormatError("annotate: image size differs from frame")
    else:
        img = np.full((h, w, 3), BACKGROUND, dtype=np.uint8)
    track = expanded_track if expanded_track is not None else bundle.track_mask
    img[track.data] = blend(img[track.data], PALETTE["track"], TRACK_ALPHA)

    by_object: dict[int, list[DistanceRecord]] = {}
    for r in records:
        by_object.setdefault(r.object_index, []).append(r)
    obstacles = []
    for idx in sorted(by_object):
        det = bundle.detections[idx]
        img[det.data] = blend(img[det.data], PALETTE[det.class_label], OBJECT_ALPHA)
    for idx in sorted(by_object):
        recs = by_object[idx]
        if not any(r.is_obstacle for r in recs):
            continue
        det = bundle.detections[idx]
        img[outline(det.data)] = OUTLINE
        best = next((r for r in recs if r.filtered_distance_m is not None), None)
        dist = None if best is None else round(best.filtered_distance_m, 2)
        label = f"{det.class_label} {det.score:.2f}" + ("" if dist is None else f" {dist:.1f} m")
        obstacles.append({"object_index": idx, "class": det.class_label, "score": det.score,
                          "track_id": det.track_id, "distance_m": dist,
                          "estimator": None if best is None else best.estimator, "label": label})
    return encode_ppm(img), {"frame_index": bundle.frame_index, "obstacles": obstacles}
