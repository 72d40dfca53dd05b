import numpy as np
import pytest

from vividforge.latent_codec import make_basis
from vividforge.media_io import synth_clip


@pytest.fixture(scope="session")
def basis():
    return make_basis()


@pytest.fixture(scope="session")
def small_clip():
    """Deterministic 9x64x64 synthetic clip with masks."""
    return synth_clip(seed=7, frames=9, size=64)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    scale = max(abs(a), abs(b))
    if scale < floor:
        return 0.0
    return abs(a - b) / scale


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260809)
