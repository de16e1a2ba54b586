"""Goodness of fit, power-law fitting, deviation tables and baseline filters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc, kolmogorov, zeta

__all__ = [
    "KsResult",
    "FitReport",
    "AnalyticsError",
    "ks_two_sample",
    "fit_power_law_discrete",
    "sample_discrete_power_law",
    "deviation_table",
    "write_deviation_csv",
    "moving_average_filter",
    "fit_var",
    "var_ls_filter",
]


class AnalyticsError(ValueError):
    pass


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float


def ks_two_sample(a, b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test.

    The p-value uses the asymptotic Kolmogorov distribution at
    ``(sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) D`` with ``ne = n m / (n + m)``.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise AnalyticsError("both samples must be nonempty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = np.sqrt(a.size * b.size / (a.size + b.size))
    p = float(np.clip(kolmogorov((en + 0.12 + 0.11 / en) * d), 0.0, 1.0))
    return KsResult(d, p)


@dataclass(frozen=True)
class FitReport:
    """Discrete power-law fit ``p(l) = l^-exponent / zeta(exponent, l_min)`` for ``l >= l_min``.

    ``llr_vs_exponential > 0`` favours the power law; ``p_value`` is the
    Vuong two-sided significance of that sign.  ``ks_statistic`` is the
    distance between the empirical and fitted CDFs.
    """

    exponent: float
    llr_vs_exponential: float
    ks_statistic: float
    p_value: float
    n: int
    l_min: int = 1
    small_sample: bool = False

    @property
    def slope(self) -> float:
        """Log-log slope of the fitted pmf (the negated exponent)."""
        return -self.exponent

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _pl_loglik(gamma, x, l_min):
    return -gamma * np.sum(np.log(x)) - x.size * np.log(zeta(gamma, l_min))


def _fit_at(x: np.ndarray, l_min: int) -> FitReport:
    x = x[x >= l_min]
    n = x.size
    if n == 0:
        raise AnalyticsError("no observations at or above l_min")
    res = minimize_scalar(lambda g: -_pl_loglik(g, x, l_min), bounds=(1.0 + 1e-6, 20.0),
                          method="bounded", options={"xatol": 1e-10})
    gamma = float(res.x)
    lp = -gamma * np.log(x) - np.log(zeta(gamma, l_min))
    # discrete exponential (geometric) MLE on the shifted support
    mean_excess = float(np.mean(x - l_min))
    if mean_excess > 0:
        q = mean_excess / (1.0 + mean_excess)
        le = np.log1p(-q) + (x - l_min) * np.log(q)
    else:
        le = np.zeros(n)
    diff = lp - le
    llr = float(diff.sum())
    sd = float(diff.std())
    p = float(erfc(abs(llr) / (np.sqrt(2 * n) * sd))) if sd > 0 else 0.0
    support = np.arange(l_min, int(x.max()) + 1)
    emp = np.searchsorted(np.sort(x), support, side="right") / n
    model = 1.0 - zeta(gamma, support + 1) / zeta(gamma, l_min)
    ks = float(np.max(np.abs(emp - model)))
    return FitReport(gamma, llr, ks, p, int(n), int(l_min), n < 50)


def fit_power_law_discrete(degrees, l_min: int = 1, auto_l_min: bool = False,
                           max_l_min: int | None = None) -> FitReport:
    """Maximum-likelihood discrete power law with a likelihood ratio against a discrete exponential.

    With ``auto_l_min`` the lower cutoff minimising the KS distance is
    chosen among observed values up to ``max_l_min``; otherwise every value
    must be at least ``l_min``.  Fewer than 50 points set ``small_sample``.
    """
    x = np.asarray(degrees, dtype=float).ravel()
    if x.size == 0:
        raise AnalyticsError("empty sample")
    if l_min < 1:
        raise AnalyticsError("l_min must be >= 1")
    if auto_l_min:
        cands = np.unique(x[x >= 1]).astype(int)
        if max_l_min is not None:
            cands = cands[cands <= max_l_min]
        cands = [c for c in cands if np.sum(x >= c) >= 2]
        if not cands:
            raise AnalyticsError("no admissible l_min")
        fits = [_fit_at(x, int(c)) for c in cands]
        return min(fits, key=lambda f: f.ks_statistic)
    if np.any(x < l_min):
        raise AnalyticsError("all values must be >= l_min")
    return _fit_at(x, l_min)


def sample_discrete_power_law(gamma: float, n: int, l_min: int = 1, seed=None,
                              l_max: int = 10**6) -> np.ndarray:
    """Draws from ``p(l) proportional to l^-gamma``, ``l_min <= l <= l_max``, by CDF inversion."""
    rng = np.random.default_rng(seed)
    support = np.arange(l_min, l_max + 1, dtype=float)
    pmf = support**-gamma
    cdf = np.cumsum(pmf)
    cdf /= cdf[-1]
    return support[np.searchsorted(cdf, rng.random(n), side="right").clip(max=len(support) - 1)].astype(int)


def deviation_table(model_traj, data_traj, weights=None) -> dict:
    """Average-square, average-absolute and maximum-absolute deviations per degree group.

    Groups are degree 1, degree 2 and degrees 3 and above.  The ``3+``
    series is the node-count weighted infected fraction over those degrees
    (``weights`` are node counts or degree probabilities for degrees
    ``1..L``; equal weights if omitted).  Differences are taken at every
    time point, then averaged or maximised over time.
    """
    m = np.atleast_2d(np.asarray(model_traj, dtype=float))
    d = np.atleast_2d(np.asarray(data_traj, dtype=float))
    if m.shape != d.shape:
        raise AnalyticsError(f"trajectory shapes differ: {m.shape} vs {d.shape}")
    L = m.shape[1]
    w = np.ones(L) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (L,):
        raise AnalyticsError("weights must have one entry per degree")
    groups = {}
    for name, cols in (("1", [0]), ("2", [1]), ("3+", list(range(2, L)))):
        cols = [c for c in cols if c < L]
        if not cols:
            continue
        ww = w[cols]
        if ww.sum() <= 0:
            continue
        err = (m[:, cols] @ ww - d[:, cols] @ ww) / ww.sum()
        groups[name] = {
            "avg_sq": float(np.mean(err**2)),
            "avg_abs": float(np.mean(np.abs(err))),
            "max_abs": float(np.max(np.abs(err))),
        }
    return groups


def write_deviation_csv(table: dict, path) -> None:
    """Rows per metric, one column per degree group (the layout of a goodness-of-fit table)."""
    cols = list(table)
    rows = ["metric," + ",".join(cols)]
    for key, label in (("avg_sq", "average_square_difference"),
                       ("avg_abs", "average_absolute_difference"),
                       ("max_abs", "maximum_absolute_difference")):
        rows.append(label + "," + ",".join(repr(table[c][key]) for c in cols))
    Path(path).write_text("\n".join(rows) + "\n")


def moving_average_filter(observations, window: int) -> np.ndarray:
    """Trailing mean of the last ``window`` observations (fewer at the start)."""
    if window < 1:
        raise AnalyticsError("window must be >= 1")
    y = np.asarray(observations, dtype=float)
    c = np.cumsum(np.concatenate([np.zeros((1,) + y.shape[1:]), y]), axis=0)
    n = np.arange(1, len(y) + 1)
    lo = np.maximum(n - window, 0)
    cnt = (n - lo).reshape((-1,) + (1,) * (y.ndim - 1))
    return (c[n] - c[lo]) / cnt


def fit_var(observations, order: int = 1):
    """Least-squares VAR(order) with intercept: ``y_n = c + sum_k A_k y_{n-k}``.

    Returns ``(c, [A_1, ..., A_order])``.
    """
    if order < 1:
        raise AnalyticsError("order must be >= 1")
    y = np.atleast_2d(np.asarray(observations, dtype=float))
    if y.shape[0] == 1 and y.ndim == 2 and np.asarray(observations).ndim == 1:
        y = y.T
    n, L = y.shape
    rows = n - order
    if rows < 1 + order * L:
        raise AnalyticsError(f"need more than {order * (L + 1)} observations for VAR({order}) on {L} series")
    X = np.hstack([np.ones((rows, 1))] + [y[order - k : n - k] for k in range(1, order + 1)])
    coef, *_ = np.linalg.lstsq(X, y[order:], rcond=None)
    c = coef[0]
    A = [coef[1 + (k - 1) * L : 1 + k * L].T for k in range(1, order + 1)]
    return c, A


def var_ls_filter(observations, order: int = 1) -> np.ndarray:
    """One-step VAR predictions from a least-squares fit on the same data.

    Row ``n`` predicts ``y_n`` from ``y_{n-order..n-1}``; the first
    ``order`` rows, which have no full history, repeat the observations.
    """
    y = np.asarray(observations, dtype=float)
    squeeze = y.ndim == 1
    y2 = y[:, None] if squeeze else y
    c, A = fit_var(y2, order)
    out = y2.copy()
    for n in range(order, len(y2)):
        out[n] = c + sum(A[k - 1] @ y2[n - k] for k in range(1, order + 1))
    return out[:, 0] if squeeze else out
