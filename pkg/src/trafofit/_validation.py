"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .terms import FeatureError


def check_frame(X, name="X") -> pd.DataFrame:
    """Coerce ``X`` to a DataFrame with string column names."""
    if isinstance(X, pd.DataFrame):
        frame = X
    elif isinstance(X, dict):
        frame = pd.DataFrame(X)
    else:
        raise TypeError(f"{name} must be a pandas DataFrame (column names are needed by the formula)")
    if len(frame) == 0:
        raise ValueError(f"{name} has no rows")
    bad = [c for c in frame.columns if not isinstance(c, str)]
    if bad:
        raise TypeError(f"{name} column names must be strings, got {bad[:3]}")
    return frame


def check_columns(frame, columns):
    """Raise one error naming every missing column."""
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise FeatureError("column(s) not found in data: " + ", ".join(repr(m) for m in missing))


def check_no_missing(frame, columns):
    """Raise on the first missing value among ``columns`` with row and column."""
    for col in columns:
        na = frame[col].isna().to_numpy()
        if na.any():
            raise FeatureError(f"missing value in column {col!r} at row {int(np.flatnonzero(na)[0])}")


def with_response(X, y, response):
    """Attach ``y`` as the response column of a copy of ``X``."""
    if y is None:
        return X
    y = np.asarray(y) if not isinstance(y, pd.Series) else y
    if len(y) != len(X):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
    X = X.copy()
    X[response] = y.to_numpy() if isinstance(y, pd.Series) else y
    return X
