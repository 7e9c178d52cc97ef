import numpy as np
import pytest

from fungiforge.imaging import ImageBuffer


def solid(value, w=8, h=8):
    """Uniform RGB image; value is a scalar or (r, g, b)."""
    arr = np.zeros((h, w, 3), dtype=np.uint8)
    arr[:] = value
    return ImageBuffer(arr)


def checkerboard(lo, hi, w=8, h=8, cell=1):
    """Two-tone checkerboard with 8-bit levels lo and hi."""
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((xx // cell + yy // cell) % 2).astype(np.uint8)
    arr = (lo + (hi - lo) * mask)[:, :, None].repeat(3, axis=2).astype(np.uint8)
    return ImageBuffer(arr)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
