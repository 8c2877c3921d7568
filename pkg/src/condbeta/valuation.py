"""Discounted-cash-flow share prices from CAPM beta forecasts.

Annual market premium and growth are converted to monthly rates by
dividing by 12; all discounting is monthly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .evaluation import EvalWeighting, oos_r2
from .pipeline import ForecastPanel

GROWTH_GRID = (0.0, 0.01, 0.02)
PREMIUM_GRID = (0.08, 0.10, 0.12)
TERM_HORIZONS = (1, 3, 6, 12)
# cash-flow multiples of the monthly cash flow for the 1/3/6/12 buckets
TERM_CF_MULTIPLES = (1.0, 2.0, 3.0, 6.0)


class ValuationError(ArithmeticError):
    pass


def cost_of_equity(beta: float, premium_annual: float, riskfree: float = 0.0) -> tuple[float, float]:
    """(annual, monthly) CAPM cost of equity."""
    annual = riskfree + beta * premium_annual
    return annual, annual / 12.0


def dcf_single(cf1: float, r: float, g: float, where: str = "") -> float:
    """Twelve flat monthly cash flows plus a growing perpetuity after month 12."""
    if not r > g:
        raise ValuationError(f"discount rate {r} must exceed growth {g} for a finite terminal value{where}")
    disc = (1.0 + r) ** -np.arange(1, 13)
    return float(cf1 * disc.sum() + disc[-1] * cf1 / (r - g))


def dcf_term_structure(cf1: float, rates, g: float, where: str = "") -> float:
    """Horizon-bucketed cash flows, each discounted at its horizon's rate.

    ``rates`` are the monthly rates for the 1, 3, 6 and 12-month horizons;
    bucket j is discounted with exponent j and the terminal value with the
    12-month rate over 12 periods.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (4,) or not np.all(np.isfinite(rates)):
        raise ValuationError("need four finite horizon rates")
    r12 = rates[3]
    if not r12 > g:
        raise ValuationError(f"12-month rate {r12} must exceed growth {g}{where}")
    cfs = cf1 * np.array(TERM_CF_MULTIPLES)
    pv = sum(cfs[j] / (1.0 + rates[j]) ** (j + 1) for j in range(4))
    return float(pv + (1.0 + r12) ** -12 * cfs[3] / (r12 - g))


def valuation_r2(predicted, realized, benchmark_predicted) -> float:
    """Panel out-of-sample R^2 of model-implied against benchmark-implied prices."""
    predicted = np.asarray(predicted, dtype=float)
    n = predicted.size
    fp = ForecastPanel(
        np.arange(n).astype(str), np.zeros(n, dtype="datetime64[M]"), ["m"] * n, ["price"] * n,
        np.zeros(n, int), predicted, realized, benchmark_predicted,
    )
    return oos_r2(fp, EvalWeighting.Panel)


@dataclass(frozen=True)
class PricingRows:
    """Per-(asset, month) inputs: cash flow, realized price and beta forecasts."""

    asset: np.ndarray
    month: np.ndarray
    cash_flow: np.ndarray
    price: np.ndarray
    model_beta: dict  # horizon -> array
    bench_beta: dict  # horizon -> array


def rolling_cash_flow(dividends, window: int = 12) -> np.ndarray:
    """Trailing ``window``-month mean of monthly dividends along axis 0.

    The first ``window - 1`` months, and any window touching a missing
    value, are NaN.
    """
    d = np.asarray(dividends, dtype=float)
    out = np.full(d.shape, np.nan)
    if d.shape[0] < window:
        return out
    c = np.cumsum(np.vstack([np.zeros((1,) + d.shape[1:]), d]), axis=0)
    out[window - 1:] = (c[window:] - c[:-window]) / window
    return out


def pricing_rows(fp: ForecastPanel, model: str, kind: str, cash_flow, price, months, asset_ids) -> PricingRows:
    """Collect one model's beta forecasts by (asset, formation month).

    A forecast for target month T at horizon h is made at T - h, so it is
    paired with the cash flow and observed price of month T - h.
    ``cash_flow`` and ``price`` are (n_months x n_assets) on ``months`` x
    ``asset_ids``.
    """
    pm = {m: i for i, m in enumerate(np.asarray(months, dtype="datetime64[M]"))}
    pa = {a: j for j, a in enumerate(asset_ids)}
    sub = fp.select(model=model, kind=kind)
    keys = {}
    model_beta, bench_beta = {}, {}
    for a, T, h, f, b in zip(sub.asset, sub.target_month, sub.horizon, sub.forecast, sub.benchmark):
        t = T - np.timedelta64(int(h), "M")
        k = keys.setdefault((str(a), t), len(keys))
        model_beta.setdefault(int(h), {})[k] = f
        bench_beta.setdefault(int(h), {})[k] = b
    n = len(keys)
    asset = np.array([a for a, _ in keys], dtype=object)
    month = np.array([t for _, t in keys], dtype="datetime64[M]")
    cf, px = np.full(n, np.nan), np.full(n, np.nan)
    for (a, t), k in keys.items():
        i, j = pm.get(t), pa.get(a)
        if i is not None and j is not None:
            cf[k], px[k] = cash_flow[i, j], price[i, j]

    def dense(d):
        out = {}
        for h, vals in d.items():
            arr = np.full(n, np.nan)
            arr[list(vals)] = list(vals.values())
            out[h] = arr
        return out

    # missing cash flow behaves like a non-payer and is filtered out
    cf = np.where(np.isfinite(cf), cf, 0.0)
    return PricingRows(asset, month, cf, px, dense(model_beta), dense(bench_beta))


def price_panel(rows: PricingRows, g_annual: float, premium_annual: float, horizon) -> tuple:
    """Model and benchmark prices for one horizon (or "term"); rows with a
    nonpositive cash flow or an invalid discount rate are dropped."""
    keep = rows.cash_flow > 0
    g = g_annual / 12.0
    pm, pb = np.full(keep.size, np.nan), np.full(keep.size, np.nan)
    for i in np.flatnonzero(keep):
        for beta_map, out in ((rows.model_beta, pm), (rows.bench_beta, pb)):
            try:
                if horizon == "term":
                    rates = [cost_of_equity(beta_map[h][i], premium_annual)[1] for h in TERM_HORIZONS]
                    out[i] = dcf_term_structure(rows.cash_flow[i], rates, g)
                else:
                    r = cost_of_equity(beta_map[horizon][i], premium_annual)[1]
                    out[i] = dcf_single(rows.cash_flow[i], r, g)
            except (ValuationError, KeyError):
                pass
    ok = keep & np.isfinite(pm) & np.isfinite(pb) & np.isfinite(rows.price)
    return pm[ok], rows.price[ok], pb[ok]


def valuation_table(rows: PricingRows, model_name: str, growth=GROWTH_GRID, premium=PREMIUM_GRID,
                    horizons=(1, 3, 6, 12, "term"), kind: str = "") -> list[dict]:
    out = []
    for g in growth:
        for rm in premium:
            for h in horizons:
                if h == "term" and not all(k in rows.model_beta for k in TERM_HORIZONS):
                    continue
                if h != "term" and h not in rows.model_beta:
                    continue
                pm, real, pb = price_panel(rows, g, rm, h)
                r2 = valuation_r2(pm, real, pb) if pm.size else float("nan")
                out.append({"growth": g, "premium": rm, "horizon": str(h), "model": model_name, "kind": kind,
                            "r2_pct": 100.0 * r2, "n": int(pm.size)})
    return out


def write_valuation_table(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fh.write("# growth and premium annual; monthly rate = annual/12; r2 in percent\n")
        w.writerow(["growth", "premium", "horizon", "model", "kind", "r2_pct", "n"])
        for r in rows:
            w.writerow([r["growth"], r["premium"], r["horizon"], r["model"], r.get("kind", ""),
                        repr(r["r2_pct"]), r["n"]])
