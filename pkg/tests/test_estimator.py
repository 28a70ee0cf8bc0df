import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from trafofit import ColrNN, LmNN, PolrNN, TransformationModel, cotramNN
from trafofit.train import EnsembleModel

FAST = dict(epochs=5, batch_size=64, learning_rate=0.05)


def test_get_params_and_clone():
    est = LmNN("y ~ x", epochs=7, seed=3)
    params = est.get_params()
    assert params["basis"] == "linear" and params["latent"] == "normal" and params["epochs"] == 7
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_alias_rejects_explicit_basis():
    with pytest.raises(TypeError, match="ColrNN fixes basis"):
        ColrNN("y ~ x", basis="linear")
    assert cotramNN("y ~ x").response_type == "count"
    assert PolrNN("y ~ x").basis == "discrete"


def test_unfitted_errors(continuous_frame):
    with pytest.raises(NotFittedError):
        TransformationModel("y ~ x").predict(continuous_frame)


def test_fit_predict_transform_score(continuous_frame):
    est = TransformationModel("y ~ x + g", **FAST).fit(continuous_frame)
    X = continuous_frame.drop(columns="y")
    assert est.predict(X, "cdf", K=9).shape == (120, 9)
    h = est.transform(continuous_frame)
    assert h.shape == (120, 1)
    assert est.score(continuous_frame) == pytest.approx(est.log_lik(continuous_frame) / 120)
    assert len(est.history_.train_loss) == 5 and est.n_features_in_ == 3


def test_fit_with_separate_y(continuous_frame):
    X, y = continuous_frame.drop(columns="y"), continuous_frame["y"]
    a = TransformationModel("y ~ x", **FAST).fit(X, y)
    b = TransformationModel("y ~ x", **FAST).fit(continuous_frame)
    np.testing.assert_array_equal(a.model_.store.values, b.model_.store.values)
    with pytest.raises(ValueError):
        TransformationModel("y ~ x").fit(X, y[:5])


def test_non_frame_input_rejected():
    with pytest.raises(TypeError, match="DataFrame"):
        TransformationModel("y ~ x").fit(np.zeros((5, 2)))


def test_weight_control_and_compile(continuous_frame):
    est = TransformationModel("y ~ x", weight_control={"warmstart": {"x": 0.3}, "trainable": {"x": False}}, **FAST)
    assert est.compile(continuous_frame).coef()["x"] == 0.3
    assert est.fit(continuous_frame).coef()["x"] == 0.3


def test_ensemble_estimator_and_save(tmp_path, continuous_frame):
    est = TransformationModel("y ~ x", n_ensemble=2, **FAST).fit(continuous_frame)
    assert isinstance(est.model_, EnsembleModel) and len(est.history_) == 2
    est.save(tmp_path / "e.json")
    back = TransformationModel.load(tmp_path / "e.json")
    assert back.score(continuous_frame) == est.score(continuous_frame)


def test_cross_validate_leaves_estimator_unfitted(continuous_frame):
    est = TransformationModel("y ~ x", **FAST)
    res = est.cross_validate(continuous_frame, folds=3)
    assert len(res.folds) == 3 and not hasattr(est, "model_")
