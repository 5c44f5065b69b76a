"""Small estimators with standard errors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def z(self, target: float) -> float:
        if self.se == 0:
            return 0.0 if self.value == target else math.inf
        return (self.value - target) / self.se

    def within(self, target: float, k: float = 3.0, bias: float = 0.0) -> bool:
        return abs(self.value - target) <= k * self.se + bias

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se}


def mean_se(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return Estimate(math.nan, math.nan)
    if np.any(np.isinf(x)):
        # a single infinite draw makes the mean infinite; there is no finite error bar
        return Estimate(float(x.sum()), math.inf)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    return Estimate(float(x.mean()), se)


def proportion(k: int, n: int) -> Estimate:
    p = k / n
    return Estimate(p, math.sqrt(max(p * (1 - p), 0.0) / n))


def ratio_mean(y, w) -> Estimate:
    """Self-normalized ``sum w y / sum w`` with the delta-method standard error."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    if sw <= 0:
        return Estimate(math.nan, math.nan)
    r = float(np.dot(w, y) / sw)
    n = y.size
    resid = w * (y - r)
    se = math.sqrt(float(np.sum(resid**2))) / sw * math.sqrt(n / max(n - 1, 1))
    return Estimate(r, se)


def ess(w) -> float:
    w = np.asarray(w, dtype=float)
    s2 = float(np.sum(w * w))
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


def cluster_mean(values, clusters) -> Estimate:
    """Mean of ``values`` with a standard error robust to correlation within
    ``clusters`` (e.g. restarts sharing a parent sample)."""
    values = np.asarray(values, dtype=float)
    clusters = np.asarray(clusters)
    m = float(values.mean())
    _, inv = np.unique(clusters, return_inverse=True)
    sums = np.bincount(inv, weights=values - m)
    g = sums.size
    n = values.size
    if g < 2:
        return Estimate(m, math.inf)
    se = math.sqrt(float(np.sum(sums**2)) * g / (g - 1)) / n
    return Estimate(m, se)


def ols_hc0(y, X) -> tuple[np.ndarray, np.ndarray]:
    """OLS coefficients with heteroskedasticity-robust (HC0) standard errors."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    XtX_inv = np.linalg.pinv(X.T @ X)
    beta = XtX_inv @ X.T @ y
    e = y - X @ beta
    meat = (X * (e * e)[:, None]).T @ X
    cov = XtX_inv @ meat @ XtX_inv
    return beta, np.sqrt(np.maximum(np.diag(cov), 0.0))
