import json
import tracemalloc

import numpy as np
import pandas as pd
import pytest

from trafofit.cli import load_config, main, read_data
from trafofit.model import compile_model, load_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_config(path, **cfg):
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def workdir(tmp_path, continuous_frame):
    continuous_frame.to_csv(tmp_path / "d.csv", index=False)
    return tmp_path


FIT = {"epochs": 3, "batch_size": 64, "learning_rate": 0.05}


def _fit(capsys, workdir, **cfg):
    cfg.setdefault("fit", FIT)
    conf = write_config(workdir / "c.json", **cfg)
    code, out, err = run(capsys, "fit", "--config", conf, "--data", workdir / "d.csv", "--out", workdir / "run")
    assert code == 0, err
    return workdir / "run" / "model.json", out


@pytest.mark.parametrize(
    "alias, basis, latent",
    [("LmNN", "linear", "normal"), ("CoxphNN", "bernstein", "gompertz"), ("ColrNN", "bernstein", "logistic")],
)
def test_alias_selects_basis_and_latent(capsys, workdir, alias, basis, latent):
    path, out = _fit(capsys, workdir, formula="y ~ x", model=alias)
    m = load_model(path)
    assert (m.basis.kind, m.latent.name) == (basis, latent)
    assert "Shift coefficients:" in out


def test_fit_outputs(capsys, workdir):
    _fit(capsys, workdir, formula="y | g ~ x", data={"categorical": ["g"]})
    run_dir = workdir / "run"
    assert sorted(p.name for p in run_dir.iterdir()) == ["coefficients.json", "history.csv", "model.json", "summary.txt"]
    hist = pd.read_csv(run_dir / "history.csv")
    assert len(hist) == 3
    coefs = json.loads((run_dir / "coefficients.json").read_text())
    assert set(coefs["shifting"]) == {"1", "x"} and set(coefs["interacting"]) == {"1", "gb", "gc"}


def test_ontram_style_config(capsys, workdir):
    path, _ = _fit(capsys, workdir, response="~ y", intercept="~ 1", shift="~ x + z")
    assert set(load_model(path).coef()) == {"1", "x", "z"}


def test_missing_columns_listed(capsys, workdir):
    conf = write_config(workdir / "c.json", formula="y ~ x + nope + zz")
    code, _, err = run(capsys, "fit", "--config", conf, "--data", workdir / "d.csv")
    assert code == 1
    assert err.count("\n") == 1 and err.startswith("error[E_SCHEMA]:") and "nope" in err and "zz" in err


@pytest.mark.parametrize(
    "cfg, code",
    [
        ({"formula": "y ~ x", "model": "LmNN", "basis": "linear"}, "E_CONFIG"),
        ({"formula": "y ~ x", "colour": 1}, "E_CONFIG"),
        ({"formula": "y ~ x +"}, "E_FORMULA"),
        ({"formula": "y ~ x", "fit": {"epochs": 1, "learning_rate": -1}}, "E_VALUE"),
        ({"formula": "y ~ x", "model": "NoSuchNN"}, "E_CONFIG"),
    ],
)
def test_config_errors_single_line(capsys, workdir, cfg, code):
    conf = write_config(workdir / "c.json", **cfg)
    rc, _, err = run(capsys, "fit", "--config", conf, "--data", workdir / "d.csv")
    assert rc == 1 and err.startswith(f"error[{code}]:") and err.count("\n") == 1


def test_usage_and_io_errors(capsys, workdir):
    rc, _, err = run(capsys, "fit", "--bogus")
    assert rc == 2 and err.startswith("error[E_USAGE]:")
    rc, _, err = run(capsys, "predict", "--model", workdir / "none.json", "--data", workdir / "d.csv")
    assert rc == 1 and err.startswith("error[E_IO]:")
    rc, _, err = run(capsys, "simulate", "nonsense")
    assert rc == 2 and "unknown generator" in err


def test_missing_value_reports_row_and_column(capsys, workdir, continuous_frame):
    continuous_frame.loc[7, "x"] = np.nan
    continuous_frame.to_csv(workdir / "d.csv", index=False)
    conf = write_config(workdir / "c.json", formula="y ~ x")
    rc, _, err = run(capsys, "fit", "--config", conf, "--data", workdir / "d.csv")
    assert rc == 1 and "'x'" in err and "row 7" in err


def test_predict_grid_rows(capsys, workdir, continuous_frame):
    path, _ = _fit(capsys, workdir, formula="y ~ x")
    continuous_frame.drop(columns="y").head(4).to_csv(workdir / "new.csv", index=False)
    out = workdir / "p.csv"
    assert run(capsys, "predict", "--model", path, "--data", workdir / "new.csv", "--type", "cdf", "--out", out)[0] == 0
    table = pd.read_csv(out)
    assert table.columns.tolist() == ["row", "y", "value"] and len(table) == 400
    assert table.groupby("row").size().tolist() == [100] * 4
    run(capsys, "predict", "--model", path, "--data", workdir / "new.csv", "--q", "0,1,2", "--grid-k", "7", "--out", out)
    assert len(pd.read_csv(out)) == 12
    rc, _, err = run(capsys, "predict", "--model", path, "--data", workdir / "new.csv", "--type", "median")
    assert rc == 2 and "unknown prediction type" in err


def test_predict_at_response_and_terms(capsys, workdir):
    path, _ = _fit(capsys, workdir, formula="y ~ x + z")
    run(capsys, "predict", "--model", path, "--data", workdir / "d.csv", "--type", "pdf", "--out", workdir / "p.csv")
    assert len(pd.read_csv(workdir / "p.csv")) == 120
    run(capsys, "predict", "--model", path, "--data", workdir / "d.csv", "--type", "terms", "--out", workdir / "t.csv")
    terms = pd.read_csv(workdir / "t.csv")
    assert sorted(terms["term"].unique()) == ["1", "x", "z"] and len(terms) == 360


def test_predict_ordinal_levels(capsys, tmp_path, ordinal_frame):
    ordinal_frame.to_csv(tmp_path / "d.csv", index=False)
    conf = write_config(
        tmp_path / "c.json", formula="y ~ x", model="PolrNN", fit=FIT,
        data={"levels": {"y": ["lo", "mid", "hi", "top"]}},
    )
    assert run(capsys, "fit", "--config", conf, "--data", tmp_path / "d.csv", "--out", tmp_path)[0] == 0
    ordinal_frame.drop(columns="y").head(5).to_csv(tmp_path / "new.csv", index=False)
    run(capsys, "predict", "--model", tmp_path / "model.json", "--data", tmp_path / "new.csv", "--type", "pdf",
        "--out", tmp_path / "p.csv")
    table = pd.read_csv(tmp_path / "p.csv")
    assert len(table) == 20 and table["y"].head(4).tolist() == ["lo", "mid", "hi", "top"]
    np.testing.assert_allclose(table.groupby("row")["value"].sum(), 1.0, atol=1e-9)


def test_loglik_identity_and_persistence(capsys, workdir, continuous_frame):
    path, _ = _fit(capsys, workdir, formula="y ~ x")
    rc, out, _ = run(capsys, "loglik", "--model", path, "--data", workdir / "d.csv")
    assert rc == 0
    m = load_model(path)
    assert float(out) == m.log_lik(continuous_frame)
    run(capsys, "loglik", "--model", path, "--data", workdir / "d.csv", "--convert", "identity",
        "--out", workdir / "ll.csv")
    table = pd.read_csv(workdir / "ll.csv", float_precision="round_trip")
    assert len(table) == 120
    np.testing.assert_array_equal(table["nll"], m.nll_rows(continuous_frame))


def test_ensemble_and_cv_commands(capsys, workdir):
    conf = write_config(workdir / "c.json", formula="y ~ x", fit=FIT)
    rc, out, _ = run(capsys, "ensemble", "--config", conf, "--data", workdir / "d.csv", "--members", 3,
                     "--out", workdir / "ens")
    assert rc == 0 and "members3" in out
    assert (workdir / "ens" / "history_member3.csv").exists()
    rc, out, _ = run(capsys, "loglik", "--model", workdir / "ens" / "ensemble.json", "--data", workdir / "d.csv",
                     "--convert", "mean")
    header = out.splitlines()[0].split(",")
    assert header == ["members1", "members2", "members3", "mean", "ensemble", "trafo_ensemble"]
    rc, out, _ = run(capsys, "cv", "--config", conf, "--data", workdir / "d.csv", "--folds", 3, "--out", workdir / "cv")
    assert rc == 0 and out.startswith("best epoch:")
    assert len(pd.read_csv(workdir / "cv" / "cv.csv")) == 3


def test_lags_flag(capsys, tmp_path):
    assert run(capsys, "simulate", "ar1", "--n", 150, "--seed", 2, "--out", tmp_path / "ar.csv")[0] == 0
    conf = write_config(tmp_path / "c.json", formula="y ~ atplag(y_lag_1) + atplag(y_lag_2)", fit=FIT)
    rc, _, err = run(capsys, "fit", "--config", conf, "--data", tmp_path / "ar.csv", "--lags", 2, "--out", tmp_path)
    assert rc == 0, err
    m = load_model(tmp_path / "model.json")
    assert m.n_train == int(148 * 0.9)
    assert list(m.coef("autoregressive")) == ["atplag(y_lag_1)", "atplag(y_lag_2)"]


def test_simulate_reproducible(capsys, tmp_path):
    for name in ("a", "b"):
        run(capsys, "simulate", "large-factor", "--n", 300, "--seed", 4, "--param", "levels=10",
            "--out", tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    truth = json.loads((tmp_path / "a.csv.truth.json").read_text())
    assert truth["levels"] == 10 and truth["seed"] == 4


def test_simulate_ar1_autocorrelation(capsys, tmp_path):
    run(capsys, "simulate", "ar1", "--n", 2000, "--seed", 0, "--out", tmp_path / "ar.csv")
    y = pd.read_csv(tmp_path / "ar.csv")["y"].to_numpy()
    yc = y - y.mean()
    rho = np.dot(yc[1:], yc[:-1]) / np.dot(yc, yc)
    assert 0.6 < rho < 0.8


def test_toml_config(tmp_path):
    (tmp_path / "c.toml").write_text('formula = "y ~ x"\nmodel = "LmNN"\n[fit]\nepochs = 2\n')
    cfg = load_config(tmp_path / "c.toml")
    assert cfg["fit"]["epochs"] == 2


def test_undeclared_level_rejected(tmp_path):
    pd.DataFrame({"y": ["a", "q"]}).to_csv(tmp_path / "d.csv", index=False)
    with pytest.raises(Exception, match="row 1"):
        read_data(tmp_path / "d.csv", {"data": {"levels": {"y": ["a", "b"]}}})


@pytest.mark.slow
def test_million_row_ingestion_without_one_hot(tmp_path):
    rng = np.random.default_rng(0)
    n, levels = 10**6, 1000
    pd.DataFrame({"y": rng.normal(size=n), "x": rng.integers(1, levels + 1, n), "z": rng.normal(size=n)}).to_csv(
        tmp_path / "big.csv", index=False
    )
    tracemalloc.start()
    try:
        frame = read_data(tmp_path / "big.csv", {"data": {"categorical": ["x"]}})
        m = compile_model("y ~ 0 + x + z", frame, basis="linear", latent="normal")
        loss = m.loss(frame)
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    assert np.isfinite(loss) and len(m.coef()) == levels + 1
    # a dense one-hot of x alone would need n * levels * 8 bytes = 8 GB
    assert peak < 1e9
