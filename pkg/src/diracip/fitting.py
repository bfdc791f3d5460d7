"""Log-log slope fits for asymptotic decay experiments."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``.

    Returns ``nan`` if fewer than two points are positive.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


class LogLogSlopeFit(BaseEstimator, RegressorMixin):
    """Fit ``y = c * x**slope`` by least squares in log-log coordinates.

    ``min_points`` guards against fitting asymptotics from too few samples.
    """

    def __init__(self, min_points=2):
        self.min_points = min_points

    def fit(self, X, y):
        X = check_array(X, ensure_2d=False).reshape(-1)
        y = check_array(y, ensure_2d=False).reshape(-1)
        check_consistent_length(X, y)
        if np.any(X <= 0) or np.any(y <= 0):
            raise ValueError("log-log fits need positive data")
        if X.size < self.min_points:
            raise ValueError(f"need at least {self.min_points} points, got {X.size}")
        lx, ly = np.log(X), np.log(y)
        A = np.stack([lx, np.ones_like(lx)], axis=1)
        coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
        self.slope_, self.intercept_ = float(coef[0]), float(coef[1])
        fit = A @ coef
        self.residual_ = float(np.sqrt(np.mean((ly - fit) ** 2)))
        n = lx.size
        if n > 2:
            s2 = np.sum((ly - fit) ** 2) / (n - 2)
            self.slope_stderr_ = float(np.sqrt(s2 / np.sum((lx - lx.mean()) ** 2)))
        else:
            self.slope_stderr_ = 0.0
        self.n_points_ = n
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        X = check_array(X, ensure_2d=False).reshape(-1)
        return np.exp(self.intercept_) * X**self.slope_

    def score(self, X, y, sample_weight=None):
        """R^2 in log space."""
        check_is_fitted(self, "slope_")
        ly = np.log(check_array(y, ensure_2d=False).reshape(-1))
        pred = np.log(self.predict(X))
        ss = np.sum((ly - ly.mean()) ** 2)
        return 1.0 - np.sum((ly - pred) ** 2) / ss if ss > 0 else 1.0


def convergence_order(spacings, errors):
    """Observed order from errors at successive spacings (pairwise and fitted)."""
    s = np.asarray(spacings, dtype=float)
    e = np.asarray(errors, dtype=float)
    pair = np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])
    return loglog_slope(s, e), pair
