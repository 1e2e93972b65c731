import numpy as np
import pytest

from fundus_he import synthetic
from fundus_he.config import PipelineConfig, load_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_config() -> PipelineConfig:
    """Pipeline settings scaled to the 320 px synthetic fixtures."""
    return load_config(
        overrides=[
            "seeds.sigma=3.0",
            "seeds.open_radius=2",
            "calibrate.median_window=9",
            "cache_enabled=false",
        ]
    )


@pytest.fixture(scope="session")
def fundus_image() -> synthetic.SyntheticImage:
    return synthetic.generate_fundus(np.random.default_rng((7, 0)), "fixture0", size=320)
