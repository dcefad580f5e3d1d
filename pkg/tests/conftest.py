import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from groupfts.curves import AgeGrid, FunctionalTimeSeries, Scale

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_fts(values, ages=None, scale=Scale.RAW, first_year=2000):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n, p = values.shape
    if ages is None:
        ages = np.arange(p, dtype=float) if p > 1 else np.array([0.0, 1.0])
    if p == 1:
        # scalar series: duplicate the column so the grid has two points
        values = np.repeat(values, 2, axis=1)
    return FunctionalTimeSeries(AgeGrid(ages), np.arange(first_year, first_year + n), values, scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, p, rank=None):
    a = rng.standard_normal((p, rank or p))
    return a @ a.T
