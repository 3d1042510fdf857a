import os

import numpy as np
import pytest
from hypothesis import settings

from maskhash.dataset import Video, generate_synthetic, split
from maskhash.model import Architecture, init_params

# reproducible property tests; set HYPOTHESIS_PROFILE=explore for fresh draws
settings.register_profile("repro", derandomize=True)
settings.register_profile("explore", derandomize=False)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repro"))


def make_video(frames, label=0, video_id=0):
    return Video(id=video_id, label=label, frames=np.asarray(frames, dtype=np.float32))


def index_video(t, d=2, label=0, video_id=0):
    """Video whose frame ``i`` is filled with ``i`` - handy for checking picked indices."""
    frames = np.repeat(np.arange(t, dtype=np.float32)[:, None], d, axis=1)
    return make_video(frames, label=label, video_id=video_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_arch():
    return Architecture(feature_dim=8, embed_dim=16, repr_dim=8, code_length=8, num_classes=4,
                        n_frames=3)


@pytest.fixture
def noisy_params(small_arch):
    p = init_params(small_arch, 3)
    r = np.random.default_rng(3)
    for a in p.arrays():
        a += r.normal(0.0, 0.3, size=a.shape)
    return p


@pytest.fixture(scope="session")
def desk_data():
    """The 10-class desk-scale dataset and its 50/10 per-class split."""
    ds = generate_synthetic(10, 60, 20, 16, 3.0, 0.5, 0.1, seed=1, n_frames=5)
    train, test = split(ds, 5 / 6, seed=1)
    return ds, train, test


@pytest.fixture(scope="session")
def tiny_data():
    ds = generate_synthetic(3, 8, 12, 6, 3.0, 0.5, 0.1, seed=4, n_frames=3)
    train, test = split(ds, 0.75, seed=4)
    return ds, train, test


# filled by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
