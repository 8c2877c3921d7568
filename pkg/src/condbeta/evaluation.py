"""Forecast evaluation.

Panel, time-series and cross-sectional MSE and out-of-sample R^2,
Clark-West tests with Bartlett-kernel HAC standard errors, cumulative
forecast-error differences, quintile diagnostics, permutation group
importance and kernel density summaries.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .learners import FittedModel, predict
from .pipeline import ForecastPanel

logger = logging.getLogger(__name__)

CW_LAGS = 4
CRITICAL_VALUES = ((0.01, 2.326), (0.05, 1.645), (0.10, 1.282))


class EvaluationError(ValueError):
    pass


class EvalWeighting(str, enum.Enum):
    Panel = "Panel"
    TimeSeries = "TimeSeries"
    CrossSection = "CrossSection"


def _group_means(values: np.ndarray, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-key means in sorted key order."""
    uniq, inv = np.unique(keys, return_inverse=True)
    sums = np.bincount(inv, weights=values, minlength=uniq.size)
    cnt = np.bincount(inv, minlength=uniq.size)
    return uniq, sums / cnt


def aggregate(values, fp: ForecastPanel, weighting) -> np.ndarray:
    """Series whose plain mean is the weighted statistic.

    Panel: rows ordered by (month, asset); TimeSeries: per-asset means;
    CrossSection: per-month means in calendar order.
    """
    values = np.asarray(values, dtype=float)
    w = EvalWeighting(weighting)
    if w is EvalWeighting.Panel:
        order = np.lexsort((fp.asset.astype(str), fp.target_month))
        return values[order]
    if w is EvalWeighting.TimeSeries:
        return _group_means(values, fp.asset.astype(str))[1]
    return _group_means(values, fp.target_month)[1]


def mse(fp: ForecastPanel, which: str = "model", weighting=EvalWeighting.Panel) -> float:
    if len(fp) == 0:
        raise EvaluationError("no rows to evaluate")
    fc = fp.forecast if which == "model" else fp.benchmark if which == "benchmark" else None
    if fc is None:
        raise EvaluationError(f"which must be 'model' or 'benchmark', got {which!r}")
    return float(aggregate((fp.realization - fc) ** 2, fp, weighting).mean())


def oos_r2(fp: ForecastPanel, weighting=EvalWeighting.Panel) -> float:
    """1 - MSE_model / MSE_benchmark; NaN (with a warning) if the benchmark is perfect."""
    mb = mse(fp, "benchmark", weighting)
    if mb == 0.0:
        warnings.warn("benchmark MSE is zero; out-of-sample R^2 undefined", stacklevel=2)
        return float("nan")
    return 1.0 - mse(fp, "model", weighting) / mb


def newey_west_variance(x, lags: int = CW_LAGS) -> float:
    """Long-run variance of ``x`` with Bartlett weights 1 - l/(lags+1).

    Autocovariances use divisor T; lags are truncated to T - 1.
    """
    x = np.asarray(x, dtype=float)
    T = x.size
    e = x - x.mean()
    lags = min(lags, T - 1)
    var = e @ e / T
    for l in range(1, lags + 1):
        var += 2.0 * (1.0 - l / (lags + 1.0)) * (e[l:] @ e[:-l]) / T
    return float(var)


@dataclass(frozen=True)
class CWResult:
    dbar: float
    hac_se: float
    statistic: float
    lags: int
    n: int
    degenerate: bool = False

    @property
    def pvalue(self) -> float:
        if math.isnan(self.statistic):
            return float("nan")
        return float(norm.sf(self.statistic))

    @property
    def stars(self) -> str:
        for k, (_, crit) in enumerate(CRITICAL_VALUES):
            if self.statistic > crit:
                return "*" * (3 - k)
        return ""


def cw_differential(fp: ForecastPanel) -> np.ndarray:
    """Adjusted loss differential; positive values favour the model."""
    e_b = (fp.realization - fp.benchmark) ** 2
    e_m = (fp.realization - fp.forecast) ** 2
    return e_b - e_m + (fp.benchmark - fp.forecast) ** 2


def clark_west(fp: ForecastPanel, weighting=EvalWeighting.Panel, lags: int = CW_LAGS) -> CWResult:
    """Clark-West statistic: mean differential over its HAC standard error.

    The HAC correction runs on the aggregated series (pooled rows, per-month
    means); per-asset means have no natural order, so the time-series case
    uses the lag-0 variance.
    """
    w = EvalWeighting(weighting)
    series = aggregate(cw_differential(fp), fp, w)
    T = series.size
    if T < 2:
        raise EvaluationError("Clark-West needs at least two aggregated points")
    use_lags = 0 if w is EvalWeighting.TimeSeries else lags
    dbar = float(series.mean())
    var = newey_west_variance(series, use_lags)
    se = math.sqrt(max(var, 0.0) / T)
    if se == 0.0 or np.ptp(series) == 0.0:
        stat = 0.0 if dbar == 0.0 else math.copysign(math.inf, dbar)
        return CWResult(dbar, 0.0, stat, use_lags, T, degenerate=True)
    return CWResult(dbar, se, dbar / se, use_lags, T)


def cdfe(fp: ForecastPanel) -> tuple[np.ndarray, np.ndarray]:
    """(months, cumulative sum of monthly benchmark MSE minus model MSE)."""
    months, mb = _group_means((fp.realization - fp.benchmark) ** 2, fp.target_month)
    _, mm = _group_means((fp.realization - fp.forecast) ** 2, fp.target_month)
    return months, np.cumsum(mb - mm)


@dataclass(frozen=True)
class QuintileReport:
    realized: np.ndarray  # time-average realized portfolio beta per quintile
    mse_benchmark: np.ndarray
    mse_model: np.ndarray
    frac_positive_benchmark: np.ndarray
    frac_positive_model: np.ndarray
    months_used: int
    months_skipped: int


def quintile_assignment(realized: np.ndarray, assets: np.ndarray) -> np.ndarray:
    """Quintile 0..4 per asset by realized beta (ties broken by asset id)."""
    n = realized.size
    order = np.lexsort((assets.astype(str), realized))
    q = np.empty(n, dtype=int)
    q[order] = (5 * np.arange(n)) // n
    return q


def quintile_report(fp: ForecastPanel) -> QuintileReport:
    months = np.unique(fp.target_month)
    acc = {k: [] for k in ("real", "mb", "mm", "fb", "fm")}
    skipped = 0
    for m in months:
        idx = np.flatnonzero(fp.target_month == m)
        if idx.size < 5:
            skipped += 1
            continue
        real, fm, bm = fp.realization[idx], fp.forecast[idx], fp.benchmark[idx]
        q = quintile_assignment(real, fp.asset[idx])
        rp = np.array([real[q == k].mean() for k in range(5)])
        mp = np.array([fm[q == k].mean() for k in range(5)])
        bp = np.array([bm[q == k].mean() for k in range(5)])
        acc["real"].append(rp)
        acc["mb"].append((rp - bp) ** 2)
        acc["mm"].append((rp - mp) ** 2)
        acc["fb"].append(np.array([np.mean(real[q == k] - bm[q == k] > 0) for k in range(5)]))
        acc["fm"].append(np.array([np.mean(real[q == k] - fm[q == k] > 0) for k in range(5)]))
    if not acc["real"]:
        raise EvaluationError("no month has at least five assets")
    if skipped:
        logger.info("quintile report skipped %d month(s) with fewer than five assets", skipped)
    mean = {k: np.mean(v, axis=0) for k, v in acc.items()}
    return QuintileReport(mean["real"], mean["mb"], mean["mm"], mean["fb"], mean["fm"],
                          len(acc["real"]), skipped)


def permutation_group_importance(
    model: FittedModel,
    X,
    y,
    periods,
    groups: dict,
    seed: int = 0,
    permutation=None,
) -> dict:
    """Share (summing to 100) of the MSE increase caused by shuffling each group.

    Within every period the rows of a group's columns are permuted jointly
    (one permutation for all of the group's columns), the equal-weighted MSE
    increase is recorded and then averaged over periods. Negative increases
    are floored at zero before normalising.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    periods = np.asarray(periods)
    rng = np.random.default_rng(seed)
    if permutation is None:
        permutation = rng.permutation
    base_pred = predict(model, X)
    uniq = np.unique(periods)
    raw = {}
    for g in sorted(groups):
        cols = list(groups[g])
        if not cols:
            raw[g] = 0.0
            continue
        incs = []
        for p in uniq:
            idx = np.flatnonzero(periods == p)
            Xp = X[idx].copy()
            perm = np.asarray(permutation(idx.size))
            Xp[:, cols] = Xp[perm][:, cols]
            base = np.mean((y[idx] - base_pred[idx]) ** 2)
            shuffled = np.mean((y[idx] - predict(model, Xp)) ** 2)
            incs.append(shuffled - base)
        raw[g] = float(np.mean(incs))
    clipped = {g: max(v, 0.0) for g, v in raw.items()}
    total = sum(clipped.values())
    if total <= 0.0:
        return {g: 0.0 for g in raw}
    return {g: 100.0 * v / total for g, v in clipped.items()}


@dataclass(frozen=True)
class DensitySummary:
    grid: np.ndarray
    density: np.ndarray | None
    mode: float
    bandwidth: float
    degenerate: bool = False


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0.0:
        spread = sd
    return 0.9 * spread * x.size ** (-0.2)


def density_summary(values, bandwidth="silverman", grid_size: int = 512) -> DensitySummary:
    """Gaussian KDE on [min - 3bw, max + 3bw]; mode is the grid argmax,
    ties (to 1e-12 relative) resolved to the lowest grid value."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 1:
        raise EvaluationError("density needs finite values")
    if x.size < 2 or np.ptp(x) == 0.0:
        return DensitySummary(np.array([x[0]]), None, float(x[0]), 0.0, degenerate=True)
    if bandwidth == "silverman":
        bw = silverman_bandwidth(x)
    else:
        bw = float(bandwidth)
    grid = np.linspace(x.min() - 3 * bw, x.max() + 3 * bw, grid_size)
    dens = np.zeros(grid_size)
    for chunk in np.array_split(x, max(1, x.size // 2048)):
        u = (grid[:, None] - chunk[None, :]) / bw
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= x.size * bw * math.sqrt(2 * math.pi)
    top = dens.max()
    mode = float(grid[np.flatnonzero(dens >= top * (1 - 1e-12))[0]])
    return DensitySummary(grid, dens, mode, bw)


def evaluate_cell(fp: ForecastPanel) -> dict:
    """R^2 (in percent) and Clark-West statistics under all three weightings."""
    out = {"n_rows": len(fp)}
    for w in EvalWeighting:
        r2 = oos_r2(fp, w)
        try:
            cw = clark_west(fp, w)
        except EvaluationError:
            cw = None
        out[w.value] = {
            "r2_pct": 100.0 * r2,
            "mse_model": mse(fp, "model", w),
            "mse_benchmark": mse(fp, "benchmark", w),
            "cw_stat": None if cw is None else cw.statistic,
            "cw_dbar": None if cw is None else cw.dbar,
            "cw_se": None if cw is None else cw.hac_se,
            "stars": "" if cw is None else cw.stars,
        }
    return out
