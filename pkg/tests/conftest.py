import numpy as np
import pytest

# criterion number -> (passed, line); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report_acceptance(number: int, title: str, passed: bool, detail: str, seconds: float):
    line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail} ({seconds:.1f} s)"
    ACCEPTANCE[number] = (passed, line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n][1])
    passed = sum(ok for ok, _ in ACCEPTANCE.values())
    terminalreporter.write_line(f"{passed}/{len(ACCEPTANCE)} criteria passed")

from railobs.formats import CameraModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_camera():
    return CameraModel(200.0, 200.0, 80.0, 50.0, 160, 100)


def naive_rle_decode(counts, width, height):
    """Per-pixel reference decoder: walk the runs one pixel at a time."""
    out = np.zeros(width * height, dtype=bool)
    pos, value = 0, False
    for c in counts:
        for _ in range(c):
            out[pos] = value
            pos += 1
        value = not value
    return out.reshape(height, width)


def random_mask(rng, h, w, density=None):
    density = rng.uniform(0.05, 0.6) if density is None else density
    return rng.random((h, w)) < density


@pytest.fixture(scope="session")
def small_sequence(tmp_path_factory):
    """Twelve 320x200 oracle frames with degraded LiDAR; frame 6 has a fragmented track."""
    from railobs.oracle import default_camera, default_sequence, write_sequence

    root = tmp_path_factory.mktemp("seq")
    spec = default_sequence(12, default_camera(320, 200), fragment_frames=(6,))
    cfg = write_sequence(spec, root, degradation={"base_seed": 7})
    return root, cfg, spec
