from __future__ import annotations

import numpy as np
import pytest

from boxttt.backbones import ANSWERING, GROUNDING, build_toy_backbone


def make_image(seed: int = 0, height: int = 12, width: int = 12) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)


@pytest.fixture
def image():
    return make_image(0)


@pytest.fixture(scope="session")
def toy_grounding():
    return build_toy_backbone(seed=11, kind=GROUNDING)


@pytest.fixture(scope="session")
def toy_answerer():
    return build_toy_backbone(seed=12, kind=ANSWERING)


@pytest.fixture(scope="session")
def small_grounding():
    """Tiny-vocabulary variant for finite-difference-heavy tests."""
    return build_toy_backbone(seed=3, vocab=10, embed_dim=8, kind=GROUNDING)


@pytest.fixture(scope="session")
def small_answerer():
    return build_toy_backbone(seed=4, vocab=10, embed_dim=8, kind=ANSWERING)
