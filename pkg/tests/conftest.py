import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

os.environ.setdefault("DUALGAP_THREADS", "1")

settings.register_profile("default", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def simplex(draw, n=None, min_n=2, max_n=6, zeros=False):
    """A probability vector; with ``zeros`` some coordinates may be exactly 0."""
    k = n if n is not None else draw(st.integers(min_n, max_n))
    raw = draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k))
    w = np.array(raw)
    if zeros:
        mask = draw(st.lists(st.booleans(), min_size=k, max_size=k))
        w = np.where(mask, 0.0, w)
        if w.sum() == 0:
            w[0] = 1.0
    return w / w.sum()


@st.composite
def metric_space(draw, n=None, min_n=2, max_n=6):
    from dualgap.space import FiniteMetricSpace

    k = n if n is not None else draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return FiniteMetricSpace.random_metric(k, np.random.default_rng(seed))


@pytest.fixture
def two_point():
    from dualgap.space import FiniteMetricSpace

    return FiniteMetricSpace.euclidean([[0.0], [1.0]])
