"""Command-line front end.

Subcommands ``fit``, ``predict``, ``loglik``, ``ensemble``, ``cv`` and
``simulate``.  Errors print one line ``error[CODE]: message`` to stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import pandas as pd

from .bases import BasisDomainError
from .formula import FormulaError
from .grad import GradientError
from .loss import ResponseError
from .model import MODEL_ALIASES, compile_model, load_model
from .simulate import GENERATORS, write_simulation
from .terms import FeatureError
from .timeseries import build_lags
from .train import (
    EnsembleError,
    EnsembleModel,
    FitConfig,
    TrainingError,
    WeightControl,
    cross_validate,
    ensemble,
    fit,
)

__all__ = ["main", "CLIError", "load_config", "read_data", "build_model"]

PREDICT_TYPES = ("trafo", "pdf", "cdf", "interaction", "shift", "terms")
_CONFIG_KEYS = {
    "formula", "response", "intercept", "shift", "model", "basis", "latent",
    "options", "fit", "weight_control", "lags", "seed", "data", "output",
}


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("E_USAGE", message)


# --------------------------------------------------------------------------
# config and data


def load_config(path) -> dict:
    """Read a TOML (``.toml``) or JSON config file."""
    if path is None:
        raise CLIError("E_USAGE", "--config is required")
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as err:
        raise CLIError("E_IO", f"cannot read config {path}: {err.strerror}") from None
    try:
        if str(path).endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib

            cfg = tomllib.loads(raw.decode("utf-8"))
        else:
            cfg = json.loads(raw.decode("utf-8"))
    except ValueError as err:
        raise CLIError("E_CONFIG", f"cannot parse config {path}: {err}") from None
    if not isinstance(cfg, dict):
        raise CLIError("E_CONFIG", "config must be a table/object")
    unknown = sorted(set(cfg) - _CONFIG_KEYS)
    if unknown:
        raise CLIError("E_CONFIG", f"unknown config keys: {', '.join(unknown)}")
    if "formula" in cfg and any(k in cfg for k in ("response", "intercept", "shift")):
        raise CLIError("E_CONFIG", "give either formula or response/intercept/shift, not both")
    if "model" in cfg:
        if cfg["model"] not in MODEL_ALIASES:
            raise CLIError("E_CONFIG", f"unknown model alias {cfg['model']!r}; expected one of {sorted(MODEL_ALIASES)}")
        if "basis" in cfg or "latent" in cfg:
            raise CLIError("E_CONFIG", "model alias and explicit basis/latent are mutually exclusive")
    return cfg


def read_data(path, cfg=None, strict=True) -> pd.DataFrame:
    """CSV with header; categorical columns and level orders come from the config."""
    if path is None:
        raise CLIError("E_USAGE", "--data is required")
    cfg = cfg or {}
    data_cfg = cfg.get("data", {})
    categorical = list(data_cfg.get("categorical", [])) + list(cfg.get("options", {}).get("categorical", []))
    levels = data_cfg.get("levels", {})
    dtypes = {c: str for c in set(categorical) | set(levels)}
    try:
        frame = pd.read_csv(path, dtype=dtypes, encoding="utf-8", float_precision="round_trip")
    except OSError as err:
        raise CLIError("E_IO", f"cannot read data {path}: {err.strerror or err}") from None
    except (ValueError, pd.errors.ParserError) as err:
        raise CLIError("E_DATA", f"cannot parse {path}: {str(err).splitlines()[0]}") from None
    declared = set(categorical) | set(levels)
    missing = [c for c in declared if c not in frame.columns]
    if missing and strict:
        raise CLIError("E_SCHEMA", "declared column(s) not in data: " + ", ".join(sorted(missing)))
    for col in sorted(declared - set(missing)):
        lev = levels.get(col)
        frame[col] = pd.Categorical(frame[col], categories=lev, ordered=lev is not None)
        if lev is not None and frame[col].isna().any():
            bad = int(np.flatnonzero(frame[col].isna().to_numpy())[0])
            raise CLIError("E_DATA", f"value in column {col!r} at row {bad} is not a declared level")
    return frame


def _formula(cfg):
    if "formula" in cfg:
        return cfg["formula"]
    if all(k in cfg for k in ("response", "intercept", "shift")):
        return {k: cfg[k] for k in ("response", "intercept", "shift")}
    raise CLIError("E_CONFIG", "config needs formula or response/intercept/shift")


def _options(cfg):
    opts = dict(cfg.get("options", {}))
    if "model" in cfg:
        alias = MODEL_ALIASES[cfg["model"]]
        opts["basis"], opts["latent"] = alias["basis"], alias["latent"]
        if "response_type" in alias:
            opts.setdefault("response_type", alias["response_type"])
    for k in ("basis", "latent"):
        if k in cfg:
            opts[k] = cfg[k]
    return opts


def _schema_check(cfg, frame, formula):
    """List every missing or incomplete column before anything is compiled."""
    from .formula import parse_formula, parse_ontram

    opts = _options(cfg)
    nets = tuple(opts.get("networks", {}) or {})
    try:
        spec = (
            parse_formula(formula, networks=nets)
            if isinstance(formula, str)
            else parse_ontram(formula["response"], formula["intercept"], formula["shift"], networks=nets)
        )
    except FormulaError as err:
        raise CLIError("E_FORMULA", str(err)) from None
    needed = [spec.response, *spec.variables] + [opts[k] for k in ("event", "upper") if opts.get(k)]
    missing = [c for c in dict.fromkeys(needed) if c not in frame.columns]
    if missing:
        raise CLIError("E_SCHEMA", "column(s) not found in data: " + ", ".join(missing))
    for col in dict.fromkeys(needed):
        na = frame[col].isna().to_numpy()
        if na.any():
            raise CLIError("E_DATA", f"missing value in column {col!r} at row {int(np.flatnonzero(na)[0])}")
    return spec


def build_model(cfg, frame, seed=None):
    """Compile the configured model against ``frame`` and apply weight control."""
    formula = _formula(cfg)
    _schema_check(cfg, frame, formula)
    seed = cfg.get("seed", 0) if seed is None else seed
    model = compile_model(formula, frame, _options(cfg), seed=int(seed))
    wc = cfg.get("weight_control")
    if wc:
        from .train import apply_weight_control

        apply_weight_control(model, WeightControl.from_dict(wc))
    return model


def _prepare(args, cfg):
    frame = read_data(args.data, cfg)
    lags = args.lags if args.lags is not None else cfg.get("lags")
    if lags:
        formula = _formula(cfg)
        from .formula import parse_formula

        response = parse_formula(formula).response if isinstance(formula, str) else formula["response"].lstrip("~ ").strip()
        if response not in frame.columns:
            raise CLIError("E_SCHEMA", f"column(s) not found in data: {response}")
        frame = build_lags(frame, int(lags), response=response)
    return frame


def _fit_config(cfg, args):
    d = {k: v for k, v in cfg.get("fit", {}).items() if k not in ("members", "folds")}
    if args.seed is not None:
        d["seed"] = args.seed
    elif "seed" in cfg:
        d.setdefault("seed", cfg["seed"])
    return FitConfig.from_dict(d)


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _coef_report(model):
    report = {"shifting": model.coef("shifting")}
    report["interacting"] = {k: v.tolist() for k, v in model.coef("interacting").items()}
    try:
        report["autoregressive"] = model.coef("autoregressive")
    except ValueError:
        pass
    if model.scale_procs:
        report["scale"] = model.coef("scale")
    return report


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(args):
    cfg = load_config(args.config)
    frame = _prepare(args, cfg)
    model = build_model(cfg, frame, args.seed)
    hist = fit(model, frame, _fit_config(cfg, args))
    out = _out_dir(args)
    model.save(os.path.join(out, "model.json"))
    hist.to_csv(os.path.join(out, "history.csv"))
    with open(os.path.join(out, "coefficients.json"), "w", encoding="utf-8") as fh:
        json.dump(_coef_report(model), fh, indent=2)
    summary = model.summary()
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    if hist.floored:
        print(f"note: {hist.floored} censored observation(s) hit the probability floor")
    return 0


def _q(arg):
    if arg is None:
        return None
    try:
        return np.array([float(v) for v in arg.split(",") if v.strip()])
    except ValueError:
        raise CLIError("E_USAGE", f"--q expects comma-separated numbers, got {arg!r}") from None


def cmd_predict(args):
    if args.type not in PREDICT_TYPES:
        raise CLIError("E_USAGE", f"unknown prediction type {args.type!r}; expected one of {', '.join(PREDICT_TYPES)}")
    model = _load(args.model)
    first = model.members[0] if isinstance(model, EnsembleModel) else model
    frame = read_data(args.data, _data_config(first), strict=False)
    q = _q(args.q)
    kw = {"method": args.method} if isinstance(model, EnsembleModel) else {}
    pred = model.predict(frame, type=args.type, K=args.grid_k, q=q, **kw)
    n = len(frame)
    if args.type == "terms":
        table = pred.assign(row=np.arange(n)).melt(id_vars="row", var_name="term", value_name="value")
    elif args.type == "shift":
        table = pd.DataFrame({"row": np.arange(n), "value": pred})
    else:
        at_response = q is None and first.spec.response in frame.columns
        if at_response:
            y = frame[first.spec.response].astype(object).to_numpy()
            grid = np.broadcast_to(y, (n,))
            pred = pred.reshape(n, 1, -1) if args.type == "interaction" else pred.reshape(n, 1)
            rows_grid = grid[:, None]
        else:
            g = first.default_grid(args.grid_k) if q is None else q
            if first.basis.kind == "discrete":
                g = np.array(first.levels, dtype=object)[g.astype(int) - 1]
            rows_grid = np.broadcast_to(np.asarray(g, dtype=object), (n, len(g)))
        G = rows_grid.shape[1]
        base = {"row": np.repeat(np.arange(n), G), "y": rows_grid.ravel()}
        if args.type == "interaction":
            cols = first.theta_columns
            table = pd.DataFrame(base)
            for j, c in enumerate(cols):
                table[c] = pred[:, :, j].ravel()
        else:
            table = pd.DataFrame({**base, "value": np.asarray(pred).ravel()})
    _write_table(table, args.out)
    return 0


def _data_config(model):
    """Column typing for new data, recovered from a saved model."""
    cats = sorted({t.name for t in model.spec.interacting + model.spec.shifting if t.kind == "factor"})
    cfg = {"categorical": cats}
    if model.levels is not None and all(isinstance(v, str) for v in model.levels):
        cfg["levels"] = {model.spec.response: list(model.levels)}
    return {"data": cfg}


def _write_table(table, out):
    if out:
        d = os.path.dirname(out)
        if d:
            os.makedirs(d, exist_ok=True)
        table.to_csv(out, index=False)
    else:
        table.to_csv(sys.stdout, index=False)


def _load(path):
    if path is None:
        raise CLIError("E_USAGE", "--model is required")
    try:
        return load_model(path)
    except OSError as err:
        raise CLIError("E_IO", f"cannot read model {path}: {err.strerror}") from None
    except (ValueError, KeyError) as err:
        raise CLIError("E_MODEL", f"invalid model file {path}: {err}") from None


def cmd_loglik(args):
    model = _load(args.model)
    first = model.members[0] if isinstance(model, EnsembleModel) else model
    frame = read_data(args.data, _data_config(first), strict=False)
    if isinstance(model, EnsembleModel):
        if args.convert == "identity":
            nll = model.nll_members(frame)
            table = pd.DataFrame({f"members{b + 1}": nll[b] for b in range(nll.shape[0])})
            table["ensemble"] = model.nll_ensemble(frame)
            table["trafo_ensemble"] = model.nll_ensemble(frame, "trafo")
            table.insert(0, "row", np.arange(len(frame)))
            _write_table(table, args.out)
        else:
            res = model.log_lik(frame, args.convert)
            _write_table(res.to_frame().T, args.out)
        return 0
    res = model.log_lik(frame, args.convert)
    if args.convert == "identity":
        _write_table(pd.DataFrame({"row": np.arange(len(frame)), "nll": res}), args.out)
    else:
        print(repr(float(res)))
    return 0


def cmd_ensemble(args):
    cfg = load_config(args.config)
    frame = _prepare(args, cfg)
    model = build_model(cfg, frame, args.seed)
    members = args.members or cfg.get("fit", {}).get("members", 5)
    ens = ensemble(model, frame, int(members), _fit_config(cfg, args), cfg.get("weight_control"))
    out = _out_dir(args)
    ens.save(os.path.join(out, "ensemble.json"))
    for b, h in enumerate(ens.histories):
        h.to_csv(os.path.join(out, f"history_member{b + 1}.csv"))
    res = ens.log_lik(frame, "mean")
    print(res.to_frame().T.to_string(index=False))
    return 0


def cmd_cv(args):
    cfg = load_config(args.config)
    frame = _prepare(args, cfg)
    model = build_model(cfg, frame, args.seed)
    folds = args.folds or cfg.get("fit", {}).get("folds", 5)
    res = cross_validate(model, frame, int(folds), _fit_config(cfg, args), cfg.get("weight_control"))
    out = _out_dir(args)
    res.to_frame().to_csv(os.path.join(out, "cv.csv"), index=False)
    for i, h in enumerate(res.histories):
        h.to_csv(os.path.join(out, f"history_fold{i + 1}.csv"))
    print(f"best epoch: {res.best_epoch}")
    return 0


def cmd_simulate(args):
    if args.generator not in GENERATORS:
        raise CLIError("E_USAGE", f"unknown generator {args.generator!r}; expected one of {', '.join(sorted(GENERATORS))}")
    params = {}
    for item in args.param or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise CLIError("E_USAGE", f"--param expects key=value, got {item!r}")
        params[key] = json.loads(val)
    out = args.out or f"{args.generator}.csv"
    try:
        sidecar = write_simulation(args.generator, args.n, out, seed=args.seed or 0, **params)
    except TypeError as err:
        raise CLIError("E_USAGE", str(err)) from None
    print(f"wrote {out} and {sidecar}")
    return 0


def _parser():
    p = _Parser(prog="trafofit", description="Fit and evaluate conditional transformation models.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, config=True):
        if config:
            sp.add_argument("--config")
        sp.add_argument("--data")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)

    f = sub.add_parser("fit", help="fit a model from a config and CSV data")
    common(f)
    f.add_argument("--lags", type=int)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict from a saved model")
    common(pr, config=False)
    pr.add_argument("--model")
    pr.add_argument("--type", default="trafo")
    pr.add_argument("--grid-k", dest="grid_k", type=int, default=100)
    pr.add_argument("--q")
    pr.add_argument("--method", choices=("density", "trafo"), default="density")
    pr.set_defaults(func=cmd_predict)

    ll = sub.add_parser("loglik", help="log-likelihood of data under a saved model")
    common(ll, config=False)
    ll.add_argument("--model")
    ll.add_argument("--convert", choices=("loglik", "identity", "mean"), default="loglik")
    ll.set_defaults(func=cmd_loglik)

    e = sub.add_parser("ensemble", help="fit a deep ensemble")
    common(e)
    e.add_argument("--members", type=int)
    e.add_argument("--lags", type=int)
    e.set_defaults(func=cmd_ensemble)

    c = sub.add_parser("cv", help="k-fold cross-validation")
    common(c)
    c.add_argument("--folds", type=int)
    c.add_argument("--lags", type=int)
    c.set_defaults(func=cmd_cv)

    s = sub.add_parser("simulate", help="write a synthetic data set")
    s.add_argument("generator")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--param", action="append", help="generator parameter key=value (JSON value)")
    s.set_defaults(func=cmd_simulate)
    return p


_ERROR_CODES = (
    (FormulaError, "E_FORMULA"),
    (FeatureError, "E_SCHEMA"),
    (ResponseError, "E_RESPONSE"),
    (BasisDomainError, "E_SUPPORT"),
    (TrainingError, "E_TRAIN"),
    (GradientError, "E_TRAIN"),
    (EnsembleError, "E_TRAIN"),
    (KeyError, "E_CONFIG"),
    (TypeError, "E_CONFIG"),
    (ValueError, "E_VALUE"),
    (OSError, "E_IO"),
)


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        return args.func(args)
    except CLIError as err:
        code, msg = err.code, str(err)
    except tuple(cls for cls, _ in _ERROR_CODES) as err:
        code = next(c for cls, c in _ERROR_CODES if isinstance(err, cls))
        msg = str(err.args[0]) if isinstance(err, KeyError) and err.args else str(err)
    msg = " ".join(msg.split())
    print(f"error[{code}]: {msg}", file=sys.stderr)
    return 1 if code != "E_USAGE" else 2


if __name__ == "__main__":
    sys.exit(main())
