"""Scikit-learn style estimator over compiled transformation models."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frame, with_response
from .formula import parse_formula
from .model import MODEL_ALIASES, TrafoOptions, compile_model, load_model
from .train import EnsembleModel, FitConfig, cross_validate, ensemble, fit

__all__ = [
    "TransformationModel",
    "BoxCoxNN",
    "ColrNN",
    "cotramNN",
    "CoxphNN",
    "LehmannNN",
    "LmNN",
    "PolrNN",
    "SurvregNN",
]


class TransformationModel(BaseEstimator):
    """Conditional transformation model ``F(y|x) = F_Z(h(y|x))``.

    ``X`` passed to :meth:`fit` holds the response column named in
    ``formula`` (or pass it as ``y``).  With ``n_ensemble > 1`` the fitted
    model is a deep ensemble.

    Examples
    --------
    >>> est = TransformationModel("y ~ x", basis="linear", latent="normal", epochs=200)
    >>> est.fit(frame).coef()["x"]  # doctest: +SKIP
    """

    def __init__(
        self,
        formula="y ~ 1",
        *,
        basis=None,
        latent="logistic",
        order=10,
        support=None,
        response_type="auto",
        event=None,
        upper=None,
        networks=None,
        categorical=(),
        epochs=100,
        batch_size=32,
        validation_split=0.1,
        learning_rate=1e-3,
        decay=0.0,
        callbacks=None,
        weight_control=None,
        n_ensemble=1,
        seed=0,
    ):
        self.formula = formula
        self.basis = basis
        self.latent = latent
        self.order = order
        self.support = support
        self.response_type = response_type
        self.event = event
        self.upper = upper
        self.networks = networks
        self.categorical = categorical
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_split = validation_split
        self.learning_rate = learning_rate
        self.decay = decay
        self.callbacks = callbacks
        self.weight_control = weight_control
        self.n_ensemble = n_ensemble
        self.seed = seed

    # -- configuration --------------------------------------------------
    def _options(self):
        return TrafoOptions(
            order=self.order,
            support=tuple(self.support) if self.support is not None else None,
            basis=self.basis,
            latent=self.latent,
            response_type=self.response_type,
            event=self.event,
            upper=self.upper,
            networks=dict(self.networks or {}),
            categorical=tuple(self.categorical or ()),
        )

    def _fit_config(self):
        return FitConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            validation_split=self.validation_split,
            learning_rate=self.learning_rate,
            decay=self.decay,
            seed=self.seed,
            callbacks=list(self.callbacks or []),
        )

    @property
    def response(self) -> str:
        if isinstance(self.formula, dict):
            return self.formula["response"].lstrip("~ ").strip()
        return parse_formula(self.formula, networks=tuple(self.networks or {})).response

    # -- estimator API --------------------------------------------------
    def compile(self, X, y=None):
        """Compile without fitting; initialized (and warmstarted) weights only."""
        frame = with_response(check_frame(X), y, self.response)
        model = compile_model(self.formula, frame, self._options(), seed=self.seed)
        if self.weight_control:
            from .train import apply_weight_control

            apply_weight_control(model, self.weight_control)
        self.model_ = model
        self.history_ = None
        return self

    def fit(self, X, y=None, validation_data=None):
        frame = with_response(check_frame(X), y, self.response)
        self.compile(frame)
        cfg = self._fit_config()
        if int(self.n_ensemble) > 1:
            ens = ensemble(
                self.model_, frame, int(self.n_ensemble), cfg, self.weight_control,
                validation_data=validation_data,
            )
            self.model_ = ens
            self.history_ = ens.histories
        else:
            self.history_ = fit(self.model_, frame, cfg, None, validation_data=validation_data)
        self.n_features_in_ = len(frame.columns) - 1
        return self

    def predict(self, X, type="trafo", K=100, q=None, **kwargs):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_frame(X), type=type, K=K, q=q, **kwargs)

    def transform(self, X):
        """h(y|x) at the observed responses, as a column."""
        check_is_fitted(self, "model_")
        return np.asarray(self.predict(X, "trafo")).reshape(len(X), -1)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(with_response(check_frame(X), y, self.response))

    def score(self, X, y=None):
        """Average log-likelihood per observation (higher is better)."""
        check_is_fitted(self, "model_")
        frame = with_response(check_frame(X), y, self.response)
        if isinstance(self.model_, EnsembleModel):
            return -float(np.mean(self.model_.nll_ensemble(frame)))
        return -float(np.mean(self.model_.nll_rows(frame)))

    def log_lik(self, X, convert_fun="loglik"):
        check_is_fitted(self, "model_")
        return self.model_.log_lik(check_frame(X), convert_fun)

    def coef(self, which="shifting"):
        check_is_fitted(self, "model_")
        return self.model_.coef(which)

    def cross_validate(self, X, folds=5, y=None):
        """Cross-validated loss curves for this configuration (the estimator is left unfitted)."""
        frame = with_response(check_frame(X), y, self.response)
        model = compile_model(self.formula, frame, self._options(), seed=self.seed)
        return cross_validate(model, frame, folds, self._fit_config(), self.weight_control)

    def save(self, path):
        check_is_fitted(self, "model_")
        self.model_.save(path)

    @classmethod
    def load(cls, path):
        """Estimator wrapping a model saved with :meth:`save`."""
        model = load_model(path)
        first = model.members[0] if isinstance(model, EnsembleModel) else model
        est = cls(first.formula, basis=first.basis.kind, latent=first.latent.name, seed=first.seed)
        est.model_ = model
        est.history_ = None
        return est


def _alias(name):
    defaults = MODEL_ALIASES[name]

    def factory(formula, **kwargs):
        clash = [k for k in ("basis", "latent") if k in kwargs]
        if clash:
            raise TypeError(f"{name} fixes {' and '.join(clash)}; use TransformationModel for other choices")
        params = {"basis": defaults["basis"], "latent": defaults["latent"]}
        if "response_type" in defaults:
            params["response_type"] = kwargs.pop("response_type", defaults["response_type"])
        return TransformationModel(formula, **params, **kwargs)

    factory.__name__ = factory.__qualname__ = name
    factory.__doc__ = (
        f"Transformation model with a {defaults['basis']} response basis and "
        f"{defaults['latent']} latent distribution."
    )
    return factory


BoxCoxNN = _alias("BoxCoxNN")
ColrNN = _alias("ColrNN")
cotramNN = _alias("cotramNN")
CoxphNN = _alias("CoxphNN")
LehmannNN = _alias("LehmannNN")
LmNN = _alias("LmNN")
PolrNN = _alias("PolrNN")
SurvregNN = _alias("SurvregNN")
