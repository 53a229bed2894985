import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from railobs.formats import PointCloud
from railobs.lidar_sim import DegradationParams, degrade_cloud


def sphere_points(n, r, rng):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * np.asarray(r, float).reshape(-1, 1)


def test_zero_params_identity(rng):
    pts = rng.normal(0, 30, (1000, 3))
    pts[0] = 0.0
    p = DegradationParams(0, 0, 0, 0, 0, base_seed=3)
    out = degrade_cloud(PointCloud(pts, 5), p)
    np.testing.assert_array_equal(out.points, pts)


def test_same_inputs_bit_identical(rng):
    c = PointCloud(rng.normal(0, 30, (5000, 3)), 2, "x")
    p = DegradationParams(base_seed=11)
    a, b = degrade_cloud(c, p), degrade_cloud(c, p)
    assert a.points.tobytes() == b.points.tobytes()


def test_frame_and_seed_change_output(rng):
    c = PointCloud(rng.normal(0, 30, (5000, 3)), 2)
    p = DegradationParams(base_seed=11)
    base = degrade_cloud(c, p, frame_index=2).points
    for other in (degrade_cloud(c, p, frame_index=3).points,
                  degrade_cloud(c, DegradationParams(base_seed=12), frame_index=2).points):
        assert other.shape != base.shape or not np.array_equal(other, base)


def test_keep_rate_and_noise_at_fixed_range(rng):
    n = 100_000
    pts = sphere_points(n, 100.0, rng)
    p = DegradationParams(drop0=0.05, drop1=0.001, base_seed=1)
    out, idx, noise = degrade_cloud(PointCloud(pts), p, return_noise=True)
    assert abs(len(out) / n - 0.85) <= 0.02
    sigma = p.sigma(100.0)
    assert abs(noise.std() / sigma - 1) <= 0.05


def test_radial_displacement_equals_applied_noise(rng):
    pts = sphere_points(20_000, rng.uniform(1, 200, 20_000), rng)
    p = DegradationParams(sigma0=0.1, sigma1=0.01, base_seed=4)
    out, idx, noise = degrade_cloud(PointCloud(pts), p, return_noise=True)
    r_in = np.linalg.norm(pts[idx], axis=1)
    r_out = np.linalg.norm(out.points, axis=1)
    np.testing.assert_allclose(r_out - r_in, noise, rtol=0, atol=1e-9)
    # direction is untouched
    np.testing.assert_allclose(out.points / r_out[:, None], pts[idx] / r_in[:, None], atol=1e-12)


def test_keep_rate_non_increasing_in_range(rng):
    edges = np.arange(0, 400, 50)
    r = rng.uniform(0, 400, 200_000)
    pts = sphere_points(len(r), r, rng)
    p = DegradationParams(drop0=0.0, drop1=0.002, base_seed=9)
    _, idx, _ = degrade_cloud(PointCloud(pts), p, return_noise=True)
    kept = np.zeros(len(r), bool)
    kept[idx] = True
    rates = [kept[(r >= lo) & (r < lo + 50)].mean() for lo in edges]
    # 3-sigma binomial slack between neighbouring bins
    slack = 3 * np.sqrt(0.25 / (len(r) / len(edges)))
    assert all(b <= a + slack for a, b in zip(rates, rates[1:]))
    assert rates[0] > rates[-1]


@settings(max_examples=50, deadline=None)
@given(r=st.floats(0, 1000), d0=st.floats(0, 1), d1=st.floats(0, 0.01), dmax=st.floats(0, 1))
def test_drop_probability_bounded_and_monotone(r, d0, d1, dmax):
    p = DegradationParams(drop0=d0, drop1=d1, drop_max=dmax)
    a, b = p.drop_probability(r), p.drop_probability(r + 10)
    assert 0 <= a <= max(d0, dmax) and a <= b


def test_rejects_negative_sigma():
    with pytest.raises(ValueError):
        DegradationParams(sigma0=-1)
