import numpy as np
import pytest
from pathlib import Path

from rsc.dataset import load_cache
from rsc.frames import Frame, read_frame

import helpers

ASSETS = Path(__file__).resolve().parent.parent / "assets"


@pytest.fixture(scope="session")
def frames_dir() -> Path:
    return ASSETS / "frames"


@pytest.fixture(scope="session")
def bundled_frames(frames_dir) -> dict[str, Frame]:
    return {p.stem: read_frame(p) for p in sorted(frames_dir.glob("*.pgm"))}


@pytest.fixture(scope="session")
def bundled_cache():
    return load_cache(ASSETS / "cache.txt")


@pytest.fixture(scope="session")
def textured_frame() -> Frame:
    return Frame(helpers.textured_luma(128, seed=5))


@pytest.fixture(scope="session")
def object_frame() -> Frame:
    return Frame(helpers.object_luma(128, seed=9))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
