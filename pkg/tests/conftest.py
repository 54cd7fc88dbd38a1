import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from strokepipe.imgio import GrayImage

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def write_pgm(path, pixels, maxval=255):
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + pixels.tobytes())
    return path


def random_image(rng, shape=(8, 8), levels=16, mask_prob=0.0):
    pixels = rng.integers(0, levels, size=shape)
    mask = None
    if mask_prob > 0:
        mask = rng.random(shape) >= mask_prob
    return GrayImage(pixels, levels, mask)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
