"""Adam training loop, weight control, ensembles and cross-validation."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .grad import GradientError
from .loss import EXACT, PROB_FLOOR, convert, nll_from_h
from .model import CompiledModel, FORMAT_VERSION, _as_frame

__all__ = [
    "EarlyStopping",
    "ReduceLROnPlateau",
    "FitConfig",
    "FitHistory",
    "WeightControl",
    "TrainingError",
    "EnsembleError",
    "apply_weight_control",
    "fit",
    "ensemble",
    "EnsembleModel",
    "cv_folds",
    "cross_validate",
    "CVResult",
    "n_workers",
]

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-7


class TrainingError(RuntimeError):
    """Optimization hit a non-finite loss."""


class EnsembleError(RuntimeError):
    """One or more ensemble members failed to train."""


@dataclass
class EarlyStopping:
    monitor: str = "val_loss"
    patience: int = 10
    restore_best: bool = True
    min_delta: float = 0.0


@dataclass
class ReduceLROnPlateau:
    monitor: str = "val_loss"
    factor: float = 0.1
    patience: int = 5
    min_delta: float = 1e-8
    min_lr: float = 0.0


_CALLBACKS = {
    "early_stopping": EarlyStopping,
    "earlystopping": EarlyStopping,
    "reduce_lr_on_plateau": ReduceLROnPlateau,
    "reducelronplateau": ReduceLROnPlateau,
}


def _callback_from_dict(d):
    if isinstance(d, (EarlyStopping, ReduceLROnPlateau)):
        return d
    d = dict(d)
    kind = str(d.pop("type", "")).lower()
    if kind not in _CALLBACKS:
        raise ValueError(f"unknown callback type {kind!r}")
    return _CALLBACKS[kind](**d)


@dataclass
class FitConfig:
    epochs: int = 100
    batch_size: int = 32
    validation_split: float = 0.1
    learning_rate: float = 1e-3
    decay: float = 0.0
    seed: int = 0
    callbacks: list = field(default_factory=list)
    shuffle: bool = True

    def __post_init__(self):
        if not 0.0 <= float(self.validation_split) < 1.0:
            raise ValueError("validation_split must lie in [0, 1)")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if int(self.epochs) < 0:
            raise ValueError("epochs must be >= 0")
        if float(self.learning_rate) <= 0:
            raise ValueError("learning_rate must be positive")
        self.callbacks = [_callback_from_dict(c) for c in self.callbacks]

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fit options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["callbacks"] = [
            {"type": "early_stopping" if isinstance(c, EarlyStopping) else "reduce_lr_on_plateau", **asdict(c)}
            for c in self.callbacks
        ]
        return d


@dataclass
class FitHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_epoch: int | None = None
    floored: int = 0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, self.epochs + 1),
                "train_loss": self.train_loss,
                "val_loss": self.val_loss,
                "lr": self.lr,
            }
        )

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for i in range(self.epochs):
                w.writerow([i + 1, repr(self.train_loss[i]), repr(self.val_loss[i]), repr(self.lr[i])])


@dataclass
class WeightControl:
    """Warmstart values, trainable flags and learning-rate multipliers.

    Keys are coefficient names (``"temp"``, ``"1"``), slice names
    (``"shifting:temp"``, ``"interacting:1"``) or slice prefixes such as
    ``"shifting"`` or ``"shifting:deep(x)"``.  Warmstart values are raw
    (unconstrained) weights; for shift coefficients they equal the
    coefficient itself.
    """

    warmstart: dict = field(default_factory=dict)
    trainable: dict = field(default_factory=dict)
    lr_multiplier: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {"warmstart", "trainable", "lr_multiplier"}
        if unknown:
            raise ValueError(f"unknown weight-control keys: {sorted(unknown)}")
        return cls(**d)


def _resolve(model, name):
    """(slice name, element index or None) pairs addressed by ``name``."""
    slices = model.store.slices
    if name in slices:
        return [(name, None)]
    for role in ("shifting", "interacting", "autoregressive", "scale"):
        if f"{role}:{name}" in slices:
            return [(f"{role}:{name}", None)]
    idx = model.coef_index()
    if name in idx:
        sl, i = idx[name]
        return [(sl, None if slices[sl].size == 1 else i)]
    pref = [s for s in slices if s.startswith(name + "/") or s.startswith(name + ":")]
    if pref:
        return [(s, None) for s in pref]
    raise KeyError(f"unknown coefficient or weight slice {name!r}")


def apply_weight_control(model: CompiledModel, wc) -> CompiledModel:
    """Apply warmstarts, freezing and lr multipliers to ``model`` in place."""
    if wc is None:
        return model
    if isinstance(wc, dict):
        wc = WeightControl.from_dict(wc)
    store = model.store
    for name, value in wc.warmstart.items():
        for sl, i in _resolve(model, name):
            cur = store.get(sl).copy()
            if i is None:
                cur[...] = np.asarray(value, dtype=float)
            else:
                cur.ravel()[i] = float(value)
            store.set(sl, cur)
    for name, flag in wc.trainable.items():
        for sl, i in _resolve(model, name):
            if i is not None:
                raise ValueError(
                    f"{name!r} is one element of slice {sl!r}; trainable flags apply to whole slices"
                )
            store.slices[sl].trainable = bool(flag)
    for name, mult in wc.lr_multiplier.items():
        if float(mult) < 0:
            raise ValueError("learning-rate multipliers must be nonnegative")
        for sl, i in _resolve(model, name):
            if i is not None:
                raise ValueError(f"{name!r} is one element of slice {sl!r}; multipliers apply to whole slices")
            store.slices[sl].lr_multiplier = float(mult)
    return model


def _split(n, split, rng):
    perm = rng.permutation(n)
    n_val = n - int(n * (1.0 - split)) if split > 0 else 0
    if n_val >= n:
        raise ValueError("validation split leaves no training rows")
    return perm[: n - n_val], perm[n - n_val:]


def fit(model: CompiledModel, data, config=None, weight_control=None, validation_data=None) -> FitHistory:
    """Minimize the mean NLL plus penalties of ``model`` on ``data`` with Adam.

    Rows for validation are the last ``validation_split`` fraction after a
    seeded shuffle, unless ``validation_data`` is given.  The model's
    parameters are updated in place.
    """
    if config is None:
        config = FitConfig()
    elif isinstance(config, dict):
        config = FitConfig.from_dict(config)
    apply_weight_control(model, weight_control)
    frame = _as_frame(data)
    if len(frame) == 0:
        raise ValueError("data must not be empty")
    rng = np.random.default_rng(config.seed)
    design = model.design(frame)
    if validation_data is not None:
        train_idx = np.arange(design.n)
        val_design = model.design(_as_frame(validation_data))
        val_idx = np.arange(val_design.n)
    else:
        train_idx, val_idx = _split(design.n, config.validation_split, rng)
        val_design = design
    n_train = train_idx.size
    has_val = val_idx.size > 0

    store = model.store
    mask = store.trainable_mask() * store.lr_multipliers()
    m = np.zeros(store.size)
    v = np.zeros(store.size)
    t = 0
    lr_base = float(config.learning_rate)
    hist = FitHistory()
    early = [c for c in config.callbacks if isinstance(c, EarlyStopping)]
    plateau = [c for c in config.callbacks if isinstance(c, ReduceLROnPlateau)]
    es_state = [{"best": np.inf, "wait": 0, "params": None, "epoch": 0} for _ in early]
    pl_state = [{"best": np.inf, "wait": 0} for _ in plateau]
    best_val, best_epoch = np.inf, None
    bs = int(config.batch_size)

    def val_loss():
        if not has_val:
            return float("nan")
        return model.loss_value(val_design_inputs)

    val_design_inputs = model.batch_inputs(val_design, val_idx, n_total=n_train) if has_val else None

    for epoch in range(1, int(config.epochs) + 1):
        order = rng.permutation(train_idx) if config.shuffle else train_idx
        total = 0.0
        for b, start in enumerate(range(0, n_train, bs)):
            idx = order[start:start + bs]
            inputs = model.batch_inputs(design, idx, train=True, rng=rng, n_total=n_train)
            try:
                loss, grad = model.loss_and_grad(inputs)
            except GradientError as err:
                raise TrainingError(f"epoch {epoch}, batch {b + 1}: {err}") from None
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"epoch {epoch}, batch {b + 1}: non-finite loss or gradient")
            total += float(loss) * idx.size
            t += 1
            m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * grad * grad
            mhat = m / (1 - ADAM_BETA1**t)
            vhat = v / (1 - ADAM_BETA2**t)
            lr_t = lr_base / (1.0 + config.decay * (t - 1))
            store.values = store.values - lr_t * mask * mhat / (np.sqrt(vhat) + ADAM_EPS)
        train_loss = total / n_train
        vl = val_loss()
        hist.train_loss.append(train_loss)
        hist.val_loss.append(vl)
        hist.lr.append(lr_base / (1.0 + config.decay * max(t - 1, 0)))
        current = {"train_loss": train_loss, "val_loss": vl if has_val else train_loss, "loss": train_loss}
        mon = current["val_loss"]
        if mon < best_val:
            best_val, best_epoch = mon, epoch

        stop = False
        for cb, st in zip(early, es_state):
            value = current.get(cb.monitor, current["val_loss"])
            if value < st["best"] - cb.min_delta:
                st.update(best=value, wait=0, epoch=epoch, params=store.values.copy())
            else:
                st["wait"] += 1
                if st["wait"] >= cb.patience:
                    stop = True
        for cb, st in zip(plateau, pl_state):
            value = current.get(cb.monitor, current["val_loss"])
            if value < st["best"] - cb.min_delta:
                st.update(best=value, wait=0)
            else:
                st["wait"] += 1
                if st["wait"] >= cb.patience:
                    lr_base = max(lr_base * cb.factor, cb.min_lr)
                    st["wait"] = 0
        if stop:
            hist.stopped_epoch = epoch
            break

    for cb, st in zip(early, es_state):
        if cb.restore_best and st["params"] is not None:
            store.values = st["params"]
            best_epoch = st["epoch"]
            break
    hist.best_epoch = best_epoch
    # censored training rows whose interval probability hit the floor
    nll = model.nll_rows(None, design=design)[train_idx]
    censored = design.responses.status[train_idx] != EXACT
    hist.floored = int(np.sum(censored & (nll >= -np.log(PROB_FLOOR) - 1e-9)))
    model.n_train = n_train
    return hist


# --------------------------------------------------------------------------
# ensembles


def n_workers(jobs: int) -> int:
    """Worker count capped by the TRAFOFIT_THREADS environment variable."""
    cap = os.environ.get("TRAFOFIT_THREADS")
    try:
        cap = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        raise ValueError(f"TRAFOFIT_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(cap, jobs))


def _parallel(fn, items):
    """Run ``fn`` over items; results and errors come back in item order."""
    workers = n_workers(len(items))

    def safe(item):
        try:
            return fn(item), None
        except Exception as err:  # noqa: BLE001 - reported per member
            return None, err

    if workers == 1:
        return [safe(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(safe, items))


class EnsembleModel:
    """Deep ensemble of independently initialized members.

    ``predict`` averages member densities and CDFs (``method="density"``) or
    member transformation functions (``method="trafo"``).
    """

    def __init__(self, members, histories=None):
        if len(members) < 1:
            raise ValueError("an ensemble needs members")
        self.members = list(members)
        self.histories = list(histories or [])

    def __len__(self):
        return len(self.members)

    @property
    def latent(self):
        return self.members[0].latent

    def predict(self, newdata, type="trafo", K=100, q=None, method="density"):
        if method not in ("density", "trafo"):
            raise ValueError("method must be 'density' or 'trafo'")
        if type in ("trafo", "shift", "interaction"):
            return np.mean([m.predict(newdata, type, K=K, q=q) for m in self.members], axis=0)
        if type == "terms":
            frames = [m.predict(newdata, "terms") for m in self.members]
            return sum(frames) / len(frames)
        if method == "density" or type not in ("pdf", "cdf"):
            return np.mean([m.predict(newdata, type, K=K, q=q) for m in self.members], axis=0)
        h = np.mean([m.predict(newdata, "trafo", K=K, q=q) for m in self.members], axis=0)
        if type == "cdf":
            return self.latent.cdf(h)
        first = self.members[0]
        if first.basis.kind == "discrete" or first.response_type == "count":
            return self._discrete_trafo_pdf(newdata, K, q)
        frame = _as_frame(newdata)
        hp = []
        for m in self.members:
            d = m.design(frame, with_response=False)
            if q is None and m.spec.response in frame.columns:
                y = m._response_values(frame)
                hp.append(m._h_at(d, np.arange(d.n), y, with_prime=True)[1])
            else:
                grid = m.default_grid(K) if q is None else np.atleast_1d(np.asarray(q, dtype=float))
                rows = np.repeat(np.arange(d.n), grid.size)
                hp.append(m._h_at(d, rows, np.tile(grid, d.n), with_prime=True)[1].reshape(d.n, -1))
        return self.latent.pdf(h) * np.mean(hp, axis=0)

    def _discrete_trafo_pdf(self, newdata, K, q):
        cdf = self.predict(newdata, "cdf", K=K, q=q, method="trafo")
        if cdf.ndim == 1:
            raise ValueError("transformation-ensemble pdf of discrete responses needs a grid")
        out = np.diff(cdf, axis=1, prepend=0.0)
        if q is None and self.members[0].response_type == "count":
            out[:, -1] = 1.0 - cdf[:, -2] if cdf.shape[1] > 1 else 1.0
        return out

    def nll_members(self, newdata) -> np.ndarray:
        """(B, n) matrix of member NLL contributions."""
        return np.vstack([m.nll_rows(newdata) for m in self.members])

    def nll_ensemble(self, newdata, method="density") -> np.ndarray:
        if method == "density":
            nll = self.nll_members(newdata)
            return -(logsumexp(-nll, axis=0) - np.log(nll.shape[0]))
        frame = _as_frame(newdata)
        parts = [m.response_h(frame) for m in self.members]
        h_lo = np.mean([p[0] for p in parts], axis=0)
        h_hi = np.mean([p[1] for p in parts], axis=0)
        hp = np.mean([p[2] for p in parts], axis=0)
        status = self.members[0].encode(frame).status
        return nll_from_h(self.latent, status, h_lo, h_hi, hp)

    def log_lik(self, newdata, convert_fun="mean") -> pd.Series:
        """Per-member values, their mean, and both ensemble values."""
        nll = self.nll_members(newdata)
        out = {f"members{b + 1}": convert(nll[b], convert_fun) for b in range(nll.shape[0])}
        out["mean"] = float(np.mean([out[f"members{b + 1}"] for b in range(nll.shape[0])]))
        dens = -(logsumexp(-nll, axis=0) - np.log(nll.shape[0]))
        out["ensemble"] = convert(dens, convert_fun)
        out["trafo_ensemble"] = convert(self.nll_ensemble(newdata, "trafo"), convert_fun)
        return pd.Series(out)

    def coef(self, which="shifting"):
        return [m.coef(which) for m in self.members]

    def to_dict(self):
        return {
            "format": FORMAT_VERSION,
            "kind": "ensemble",
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file format {d.get('format')!r}")
        return cls([CompiledModel.from_dict(m) for m in d["members"]])

    def save(self, path):
        import json

        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)


def ensemble(model: CompiledModel, data, n_ensemble=5, config=None, weight_control=None, seeds=None,
             validation_data=None) -> EnsembleModel:
    """Train ``n_ensemble`` members that differ only in init and shuffle seeds.

    Member b uses ``seeds[b]`` (default ``model.seed + b``) both for its
    initialization and its shuffling; the training/validation split is the
    same for all members.
    """
    if int(n_ensemble) < 2:
        raise ValueError("an ensemble needs n_ensemble >= 2")
    if config is None:
        config = FitConfig()
    elif isinstance(config, dict):
        config = FitConfig.from_dict(config)
    if seeds is None:
        seeds = [model.seed + b for b in range(int(n_ensemble))]
    if len(seeds) != int(n_ensemble):
        raise ValueError("need one seed per member")
    frame = _as_frame(data)
    if validation_data is None and config.validation_split > 0:
        tr, va = _split(len(frame), config.validation_split, np.random.default_rng(config.seed))
        train_frame, validation_data = frame.iloc[np.sort(tr)], frame.iloc[np.sort(va)]
    else:
        train_frame = frame
    member_cfg = {**config.to_dict(), "validation_split": 0.0}

    def run(b):
        m = model.reinitialized(seeds[b])
        cfg = FitConfig.from_dict({**member_cfg, "seed": int(seeds[b])})
        h = fit(m, train_frame, cfg, weight_control, validation_data=validation_data)
        return m, h

    results = _parallel(run, list(range(int(n_ensemble))))
    failed = [(b, err) for b, (_, err) in enumerate(results) if err is not None]
    if failed:
        raise EnsembleError(
            "; ".join(f"member {b + 1}: {type(err).__name__}: {err}" for b, err in failed)
        )
    return EnsembleModel([r[0][0] for r in results], [r[0][1] for r in results])


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    histories: list
    folds: list
    mean_train: np.ndarray
    mean_val: np.ndarray
    best_epoch: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, self.mean_train.size + 1),
                "train_loss": self.mean_train,
                "val_loss": self.mean_val,
            }
        )


def cv_folds(n, folds=5, seed=0):
    """List of (train, validation) index arrays.

    ``folds`` is a fold count (seeded shuffle, remainder spread over the
    first folds) or explicit pairs of index lists, each pair either a
    ``(train, val)`` sequence or a ``{"train": ..., "val": ...}`` mapping.
    """
    if isinstance(folds, (int, np.integer)):
        k = int(folds)
        if k < 2:
            raise ValueError("need at least 2 folds")
        if k > n:
            raise ValueError(f"{k} folds is more than the {n} rows of data")
        perm = np.random.default_rng(seed).permutation(n)
        parts = np.array_split(perm, k)
        return [
            (np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i])), np.sort(parts[i]))
            for i in range(k)
        ]
    out = []
    for f in folds:
        tr, va = (f["train"], f["val"]) if isinstance(f, dict) else f
        tr, va = np.asarray(tr, dtype=np.intp), np.asarray(va, dtype=np.intp)
        for arr in (tr, va):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValueError(f"fold indices must lie in 0..{n - 1}")
        if tr.size == 0 or va.size == 0:
            raise ValueError("folds need nonempty training and validation indices")
        out.append((tr, va))
    if not out:
        raise ValueError("no folds given")
    return out


def cross_validate(model: CompiledModel, data, folds=5, config=None, weight_control=None) -> CVResult:
    """Fit a fresh copy of ``model`` per fold and average the loss curves."""
    if config is None:
        config = FitConfig()
    elif isinstance(config, dict):
        config = FitConfig.from_dict(config)
    frame = _as_frame(data).reset_index(drop=True)
    folds = cv_folds(len(frame), folds, seed=config.seed)
    cfg = FitConfig.from_dict({**config.to_dict(), "validation_split": 0.0})

    def run(i):
        tr, va = folds[i]
        m = model.reinitialized(model.seed)
        return fit(m, frame.iloc[tr], cfg, weight_control, validation_data=frame.iloc[va])

    results = _parallel(run, list(range(len(folds))))
    failed = [(i, err) for i, (_, err) in enumerate(results) if err is not None]
    if failed:
        raise EnsembleError("; ".join(f"fold {i + 1}: {type(e).__name__}: {e}" for i, e in failed))
    hists = [r[0] for r in results]
    length = max(h.epochs for h in hists)

    def mean_curve(attr):
        mat = np.full((len(hists), length), np.nan)
        for i, h in enumerate(hists):
            mat[i, : h.epochs] = getattr(h, attr)
        with np.errstate(invalid="ignore"):
            return np.nanmean(mat, axis=0)

    mean_train, mean_val = mean_curve("train_loss"), mean_curve("val_loss")
    best = int(np.nanargmin(mean_val)) + 1 if length else 0
    return CVResult(hists, folds, mean_train, mean_val, best)
