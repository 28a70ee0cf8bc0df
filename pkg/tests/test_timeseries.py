import numpy as np
import pandas as pd
import pytest

from trafofit.model import compile_model
from trafofit.simulate import simulate
from trafofit.timeseries import atplag_contribution, build_lags, lag_names


def test_build_lags_small_example():
    out = build_lags([1, 2, 3, 4], 1)
    assert out.columns.tolist() == ["y", "y_lag_1"]
    assert out["y"].tolist() == [2, 3, 4] and out["y_lag_1"].tolist() == [1, 2, 3]


def test_build_lags_row_count_and_alignment():
    y = np.arange(240.0)
    out = build_lags(y, 3)
    assert len(out) == 237
    for j in (1, 2, 3):
        np.testing.assert_array_equal(out["y"] - out[f"y_lag_{j}"], j)


def test_build_lags_exogenous_alignment():
    frame = pd.DataFrame({"y": [1.0, 2.0, 3.0], "temp": [10.0, 20.0, 30.0]})
    out = build_lags(frame, 1, exog={"w": [7, 8, 9]})
    assert out["temp"].tolist() == [20.0, 30.0] and out["w"].tolist() == [8, 9]
    assert lag_names("y", 2) == ["y_lag_1", "y_lag_2"]


@pytest.mark.parametrize("p", [0, 4, 5])
def test_build_lags_errors(p):
    with pytest.raises(ValueError):
        build_lags([1, 2, 3, 4], p)


@pytest.fixture
def ar_frame():
    frame, _ = simulate("ar1", 200, seed=1)
    return build_lags(frame[["y"]], 2)


def test_atplag_adds_one_parameter_per_lag(ar_frame):
    base = compile_model("y ~ 1", ar_frame)
    m = compile_model("y ~ atplag(y_lag_1) + atplag(y_lag_2)", ar_frame)
    assert m.store.size - base.store.size == 2
    assert list(m.coef("autoregressive")) == ["atplag(y_lag_1)", "atplag(y_lag_2)"]
    assert "atplag(y_lag_1)" not in m.coef()


def test_zero_phi_contributes_nothing(ar_frame):
    base = compile_model("y ~ 1", ar_frame, seed=4)
    m = compile_model("y ~ atplag(y_lag_1)", ar_frame, seed=4)
    m.store.set("autoregressive:atplag(y_lag_1)", [0.0])
    np.testing.assert_allclose(m.predict(ar_frame, "trafo"), base.predict(ar_frame, "trafo"), rtol=1e-13)
    np.testing.assert_array_equal(atplag_contribution(m, ar_frame["y_lag_1"]), 0.0)


def test_lag_shares_baseline_transformation(ar_frame, rng):
    m = compile_model("y ~ atplag(y_lag_1)", ar_frame)
    m.store.values = rng.normal(size=m.store.size)
    phi = m.coef("autoregressive")["atplag(y_lag_1)"]
    theta0 = m.theta()[:, 0]
    expected = phi * (m.basis.evaluate(ar_frame["y_lag_1"].to_numpy()).value @ theta0)
    np.testing.assert_allclose(atplag_contribution(m, ar_frame["y_lag_1"]), expected, rtol=1e-12)
    terms = m.predict(ar_frame.drop(columns="y"), "terms")
    np.testing.assert_allclose(terms["atplag(y_lag_1)"], expected, rtol=1e-12)


def test_atplag_rejects_ordinal_response(ordinal_frame):
    frame = ordinal_frame.assign(lag=ordinal_frame["x"])
    with pytest.raises(Exception, match="atplag"):
        compile_model("y ~ atplag(lag)", frame)
