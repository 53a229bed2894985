import hashlib

import numpy as np

from railobs.annotate import (BACKGROUND, OBJECT_ALPHA, OUTLINE, PALETTE, TRACK_ALPHA, annotate_frame,
                              decode_ppm, encode_ppm)
from railobs.formats import DistanceRecord, FrameBundle, InstanceMask
from railobs.oracle import default_camera, default_config_dict, default_sequence, make_frame
from railobs.pipeline import PipelineConfig, PipelineState, process_frame

# first verified run of the 320x200 oracle frame 0 through the full pipeline
GOLDEN_SHA256 = "d1c282930ea6b9abbe51c2cd847a981a4d6e38ddd652f827d75697b5a8353efb"


def mix(base, color, alpha):
    return tuple(((256 - alpha) * b + alpha * c) // 256 for b, c in zip(base, color))


def tiny_bundle():
    track = np.zeros((6, 8), bool)
    track[:, 3:5] = True
    obj = np.zeros((6, 8), bool)
    obj[1:4, 3:6] = True
    return FrameBundle(0, None, InstanceMask(track, "track"), (InstanceMask(obj, "person", 0.8, 4),))


def test_ppm_round_trip(rng):
    img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    np.testing.assert_array_equal(decode_ppm(encode_ppm(img)), img)


def test_empty_records_track_overlay_only():
    b = tiny_bundle()
    img = decode_ppm(annotate_frame(b, [])[0])
    bg = (BACKGROUND,) * 3
    assert tuple(img[0, 3]) == mix(bg, PALETTE["track"], TRACK_ALPHA)
    assert tuple(img[0, 0]) == bg
    # the detection is not drawn without a record
    assert tuple(img[2, 5]) == bg


def test_one_obstacle_palette_and_outline():
    b = tiny_bundle()
    rec = DistanceRecord(0, 0, 4, "person", 0.8, "sparse_mode", 12.0, 12.25, True)
    ppm, side = annotate_frame(b, [rec])
    img = decode_ppm(ppm)
    assert tuple(img[2, 5]) == OUTLINE  # border pixel
    big = np.zeros((10, 10), bool)
    big[2:8, 2:8] = True
    b2 = FrameBundle(0, None, InstanceMask(np.zeros((10, 10), bool), "track"), (InstanceMask(big, "vehicle"),))
    img2 = decode_ppm(annotate_frame(b2, [DistanceRecord(0, 0, None, "vehicle", 1.0, "sparse_mode", 5.0, 5.0,
                                                         False)])[0])
    assert tuple(img2[4, 4]) == mix((BACKGROUND,) * 3, PALETTE["vehicle"], OBJECT_ALPHA)
    assert side["obstacles"] == [{"object_index": 0, "class": "person", "score": 0.8, "track_id": 4,
                                  "distance_m": 12.25, "estimator": "sparse_mode",
                                  "label": "person 0.80 12.2 m"}]


def test_golden_oracle_frame():
    seq = default_sequence(1, default_camera(320, 200))
    fr = make_frame(seq, 0)
    r = fr.render
    b = FrameBundle(0, fr.raw, fr.track, tuple(m for m in r.masks if m.area), tuple(zip(r.clouds, r.poses)))
    cfg = PipelineConfig.from_dict(default_config_dict(seq))
    digests = set()
    for _ in range(2):
        res, _ = process_frame(b, cfg, PipelineState.for_config(cfg))
        digests.add(hashlib.sha256(annotate_frame(b, res.records, res.expanded_track)[0]).hexdigest())
    assert digests == {GOLDEN_SHA256}
