import numpy as np
import pytest

from railobs.formats import CameraModel, DepthRaster
from railobs.geometry import merge_sparse_maps, project_point_cloud
from railobs.oracle import default_scene, default_sequence
from railobs.scene import (BiasSpec, Box, GroundPlane, LidarSpec, ObjectAnnotation, SceneSpec,
                           VerticalPlane, corrupt_monocular, lidar_pose, render_scene)

CAM = CameraModel(200.0, 200.0, 80.0, 50.0, 160, 100)


def test_single_plane_fills_frame():
    spec = SceneSpec(CAM, (VerticalPlane(50.0),), (ObjectAnnotation(0, "other"),))
    r = render_scene(spec)
    assert np.all(r.depth.values == 50.0)
    assert r.masks[0].area == CAM.width * CAM.height


def test_box_mask_is_projected_rectangle():
    box = Box((0.0, 0.0, 30.0), (4.0, 2.0, 2.0))
    spec = SceneSpec(CAM, (VerticalPlane(50.0), box), (ObjectAnnotation(1, "vehicle"),))
    r = render_scene(spec)
    # the box straddles the optical axis, so only its front face at z=29 is seen
    zf = 29.0
    v, u = np.mgrid[0:CAM.height, 0:CAM.width]
    x = (u - CAM.cx) / CAM.fx * zf
    y = (v - CAM.cy) / CAM.fy * zf
    rect = (np.abs(x) <= 2.0) & (np.abs(y) <= 1.0)
    np.testing.assert_array_equal(r.masks[0].data, rect)
    np.testing.assert_allclose(r.depth.values[rect], zf, atol=1e-9)
    assert np.all(r.depth.values[~rect] == 50.0)
    assert r.objects[0].distance_m == pytest.approx(zf)


def test_empty_elevation_grid_gives_empty_cloud():
    lid = LidarSpec("a", lidar_pose((0, 0, 0)), elevation=(-10.0, 10.0, 0))
    base = SceneSpec(CAM, (GroundPlane(2.5), VerticalPlane(50.0)))
    with_lidar = SceneSpec(CAM, base.primitives, (), (lid,))
    a, b = render_scene(base), render_scene(with_lidar)
    assert len(b.clouds[0]) == 0
    np.testing.assert_array_equal(a.depth.values, b.depth.values)


def test_clouds_consistent_with_raster():
    spec = default_scene()
    r = render_scene(spec)
    for cloud, pose in zip(r.clouds, r.poses):
        assert len(cloud) > 100
        m = project_point_cloud(cloud, pose, spec.camera)
        err = np.abs(m.depths - r.depth.values[m.ys, m.xs])
        assert err.max() <= 1e-3


def test_unsnapped_lidar_still_close():
    lids = tuple(LidarSpec(l.sensor_id, l.pose, l.azimuth, l.elevation, snap_to_pixels=False)
                 for l in default_scene().lidars)
    spec = default_scene(lidars=lids)
    r = render_scene(spec)
    m = merge_sparse_maps([project_point_cloud(c, p, spec.camera) for c, p in zip(r.clouds, r.poses)])
    assert len(m) > 0


def test_visible_fraction_and_distance():
    r = render_scene(default_scene())
    for obj in r.objects:
        assert 0 < obj.visible_fraction <= 1
        assert obj.distance_m == pytest.approx(float(np.min(r.depth.values[obj.mask.data])))


def test_constant_bias():
    gt = DepthRaster(np.array([[10.0, np.nan], [100.0, 3.0]]))
    out = corrupt_monocular(gt, BiasSpec("constant", 5.0))
    np.testing.assert_array_equal(out.values, gt.values + 5.0)


def test_zero_bias_identity():
    gt = render_scene(default_scene(lidars=())).depth
    out = corrupt_monocular(gt, BiasSpec())
    np.testing.assert_array_equal(out.values, gt.values)


def test_quadratic_bowl_extremum():
    gt = DepthRaster(np.full((100, 160), 40.0))
    out = corrupt_monocular(gt, BiasSpec("quadratic", 10.0))
    diff = np.abs(out.values - gt.values)
    assert diff.max() == pytest.approx(10.0, abs=1e-6)
    assert diff[0, 0] == pytest.approx(10.0, abs=1e-6)


def test_noise_deterministic_under_seed():
    gt = DepthRaster(np.full((20, 30), 40.0))
    b = BiasSpec("constant", 1.0, noise_sigma=0.5, seed=3)
    a1, a2 = corrupt_monocular(gt, b, 4), corrupt_monocular(gt, b, 4)
    np.testing.assert_array_equal(a1.values, a2.values)
    assert not np.array_equal(a1.values, corrupt_monocular(gt, b, 5).values)


def test_sequence_spec_round_trip():
    seq = default_sequence(5)
    back = type(seq).from_dict(seq.to_dict())
    assert back.to_dict() == seq.to_dict()
    r0, r4 = render_scene(seq.scene_at(0)), render_scene(seq.scene_at(4))
    assert r4.objects[0].distance_m < r0.objects[0].distance_m
