"""Synthetic data sets with known ground truth."""

from __future__ import annotations

import json

import numpy as np
import pandas as pd
from scipy.special import expit

__all__ = ["GENERATORS", "simulate", "write_simulation"]


def gaussian_linear(n, rng, intercept=1.0, beta=0.0, sigma=1.0):
    """y = intercept + beta * x + sigma * eps with x independent standard normal."""
    x = rng.normal(size=n)
    y = intercept + beta * x + sigma * rng.normal(size=n)
    return pd.DataFrame({"y": y, "x": x}), {"intercept": intercept, "beta": beta, "sigma": sigma}


def large_factor(n, rng, levels=100):
    """y = 1{x = 2} - 1{x = 3} + eps with x uniform over ``levels`` labels 1..levels."""
    x = rng.integers(1, levels + 1, size=n)
    y = (x == 2).astype(float) - (x == 3) + rng.normal(size=n)
    codes = pd.Categorical(x.astype(str), categories=[str(k) for k in range(1, levels + 1)])
    effects = np.zeros(levels)
    effects[1], effects[2] = 1.0, -1.0
    return pd.DataFrame({"y": y, "x": codes}), {"levels": levels, "effects": effects.tolist()}


def ar1(n, rng, phi=0.7, sigma=1.0, burn_in=100):
    """Stationary AR(1): y_t = phi * y_{t-1} + sigma * eps_t."""
    if not abs(phi) < 1:
        raise ValueError("AR(1) simulation needs |phi| < 1")
    eps = sigma * rng.normal(size=n + burn_in)
    y = np.empty(n + burn_in)
    y[0] = eps[0] / np.sqrt(1 - phi**2)
    for t in range(1, y.size):
        y[t] = phi * y[t - 1] + eps[t]
    return pd.DataFrame({"t": np.arange(1, n + 1), "y": y[burn_in:]}), {"phi": phi, "sigma": sigma}


def ordinal_logit(n, rng, beta=1.0, cuts=(-1.0, 0.0, 1.5)):
    """Proportional-odds data: P(Y <= k | x) = expit(cut_k + beta * x)."""
    cuts = np.asarray(cuts, dtype=float)
    x = rng.normal(size=n)
    F = expit(cuts[None, :] + beta * x[:, None])
    u = rng.random(n)
    k = (u[:, None] > F).sum(axis=1) + 1
    labels = [f"L{j}" for j in range(1, cuts.size + 2)]
    y = pd.Categorical(np.array(labels)[k - 1], categories=labels, ordered=True)
    return pd.DataFrame({"y": y, "x": x}), {"beta": beta, "cuts": cuts.tolist(), "levels": labels}


def heteroscedastic(n, rng, beta=1.0, gamma=1.0):
    """y = beta * x + exp(gamma * z / 2) * eps, so log Var(y|x, z) = gamma * z."""
    x = rng.normal(size=n)
    z = rng.uniform(-1, 1, size=n)
    y = beta * x + np.exp(0.5 * gamma * z) * rng.normal(size=n)
    return pd.DataFrame({"y": y, "x": x, "z": z}), {"beta": beta, "gamma": gamma}


GENERATORS = {
    "gaussian-linear": gaussian_linear,
    "large-factor": large_factor,
    "ar1": ar1,
    "ordinal-logit": ordinal_logit,
    "heteroscedastic": heteroscedastic,
}


def simulate(name, n, seed=0, **params):
    """(frame, truth) from generator ``name``; same seed, same data."""
    if name not in GENERATORS:
        raise KeyError(f"unknown generator {name!r}; expected one of {sorted(GENERATORS)}")
    if int(n) < 1:
        raise ValueError("n must be positive")
    frame, truth = GENERATORS[name](int(n), np.random.default_rng(seed), **params)
    truth = {"generator": name, "n": int(n), "seed": int(seed), **truth}
    return frame, truth


def write_simulation(name, n, path, seed=0, **params):
    """Write the CSV and a ``<path>.truth.json`` sidecar; returns the sidecar path."""
    frame, truth = simulate(name, n, seed, **params)
    frame.to_csv(path, index=False)
    sidecar = f"{path}.truth.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2)
    return sidecar
