import numpy as np
import pytest

from viewsynth import synthdata
from viewsynth.geometry import Intrinsics


@pytest.fixture
def K():
    return Intrinsics(100.0, 110.0, 31.5, 23.5, 64, 48)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_pair():
    """A 64x48 textured pair with a small known motion."""
    K = synthdata.default_intrinsics(64, 48)
    scene = synthdata.random_scene(7, focal=K.fx)
    T = synthdata.sample_motion(np.random.default_rng(7), 3.0, 0.3)
    return synthdata.make_pair(scene, T, K)


def plane_scene(depth: float, seed: int = 0, scale: float = 0.05) -> synthdata.Scene:
    """Only a textured background plane at ``depth``."""
    tex = synthdata.Texture((0.5, 0.5, 0.5), scale, seed, contrast=0.45)
    return synthdata.Scene(background_depth=depth, background=tex, seed=seed)
