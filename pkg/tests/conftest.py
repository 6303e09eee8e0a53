import numpy as np
import pytest

from torusflow import fields as tf_fields
from torusflow import fluid as tf_fluid


@pytest.fixture(scope="session")
def grid64():
    return tf_fields.GridSpec((64, 64))


@pytest.fixture(scope="session")
def grid32():
    return tf_fields.GridSpec((32, 32))


def band_limited(grid, seed, max_mode=8, amplitude=1.0):
    """Random real field with all Fourier content at |k_axis| <= max_mode."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    raw = rng.standard_normal(grid.shape)
    out = tf_fields.low_pass_arrays(raw, grid, max_mode)
    return amplitude * out / max(np.abs(out).max(), 1e-30)


def random_state(grid, seed, rho_amp=0.2, m_amp=0.3, max_mode=6):
    """Smooth positive-density random state."""
    rho = 1.0 + rho_amp * band_limited(grid, seed, max_mode)
    m = m_amp * np.stack([band_limited(grid, seed + 101 + i, max_mode)
                          for i in range(grid.dim)])
    return tf_fluid.make_state(grid, rho, m)
