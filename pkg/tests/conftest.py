import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from eigenmatch import FeatureGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_grid(rng, gw, gh, channels, image_size=None) -> FeatureGrid:
    w, h = image_size or (gw * 8, gh * 8)
    values = rng.normal(size=(gh, gw, channels))
    return FeatureGrid.from_values(values, source_image_width=w, source_image_height=h)
