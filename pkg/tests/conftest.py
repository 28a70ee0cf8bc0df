import numpy as np
import pandas as pd
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def continuous_frame(rng):
    n = 120
    x = rng.normal(size=n)
    g = pd.Categorical(rng.choice(["a", "b", "c"], n))
    y = 1.0 + 0.8 * x + (g == "b") + rng.normal(size=n)
    return pd.DataFrame({"y": y, "x": x, "z": rng.uniform(size=n), "g": g})


@pytest.fixture
def ordinal_frame(rng):
    n = 150
    x = rng.normal(size=n)
    lat = x + rng.logistic(size=n)
    lev = np.digitize(lat, [-1.0, 0.5, 2.0])
    labels = ["lo", "mid", "hi", "top"]
    y = pd.Categorical(np.array(labels)[lev], categories=labels, ordered=True)
    return pd.DataFrame({"y": y, "x": x})


@pytest.fixture
def count_frame(rng):
    n = 150
    x = rng.normal(size=n)
    return pd.DataFrame({"y": rng.poisson(np.exp(0.5 + 0.3 * x)), "x": x})


@pytest.fixture
def survival_frame(rng):
    n = 150
    x = rng.normal(size=n)
    t = rng.exponential(np.exp(-0.5 * x))
    c = rng.exponential(2.0, size=n)
    return pd.DataFrame({"time": np.minimum(t, c), "event": (t <= c).astype(int), "x": x})
