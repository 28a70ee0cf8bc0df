import json

import numpy as np
import pytest

from trafofit.simulate import GENERATORS, simulate, write_simulation


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_generators_are_reproducible(name):
    a, ta = simulate(name, 50, seed=1)
    b, tb = simulate(name, 50, seed=1)
    assert a.equals(b) and ta == tb and len(a) == 50
    assert not a.equals(simulate(name, 50, seed=2)[0])


def test_large_factor_design():
    frame, truth = simulate("large-factor", 20_000, seed=0, levels=5)
    assert list(frame["x"].cat.categories) == ["1", "2", "3", "4", "5"]
    means = frame.groupby("x", observed=True)["y"].mean()
    np.testing.assert_allclose(means.to_numpy(), truth["effects"], atol=0.05)


def test_gaussian_linear_truth():
    frame, truth = simulate("gaussian-linear", 20_000, seed=0, beta=2.0)
    slope, intercept = np.polyfit(frame["x"], frame["y"], 1)
    assert slope == pytest.approx(2.0, abs=0.03) and intercept == pytest.approx(truth["intercept"], abs=0.03)


def test_ordinal_logit_levels():
    frame, truth = simulate("ordinal-logit", 500, seed=0)
    assert list(frame["y"].cat.categories) == truth["levels"] and frame["y"].cat.ordered


def test_ar1_rejects_nonstationary():
    with pytest.raises(ValueError):
        simulate("ar1", 10, phi=1.0)


def test_errors_and_sidecar(tmp_path):
    with pytest.raises(KeyError):
        simulate("nope", 10)
    with pytest.raises(ValueError):
        simulate("ar1", 0)
    sidecar = write_simulation("ar1", 20, tmp_path / "a.csv", seed=3)
    with open(sidecar) as fh:
        assert json.load(fh)["generator"] == "ar1"
