import numpy as np
import pytest

from spnclust import SynthCameraSet, synthesize

# gamma used for 64x64 synthetic fingerprints; no tabulated value exists for d=4096
SYNTH_GAMMA = 0.02


def unit_columns(rng, d, n):
    X = rng.normal(size=(d, n))
    X -= X.mean(axis=0)
    return X / np.linalg.norm(X, axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def clean_two_cameras():
    """2 cameras x 50 images at a noise level where d=4096 is informative."""
    return synthesize(SynthCameraSet(num_cameras=2, images_per_camera=50, theta_variance=0.01, rng_seed=7))


@pytest.fixture(scope="session")
def five_cameras_clean():
    return synthesize(SynthCameraSet(num_cameras=5, images_per_camera=40, theta_variance=0.01, rng_seed=3))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        status, title, detail, secs = mod.RESULTS[num]
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {title} | {detail} ({secs:.1f}s)")
