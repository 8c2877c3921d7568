"""Synthetic panels with a known characteristic-driven beta process.

Characteristics follow cross-sectionally re-standardised AR(1) processes.
The true beta of asset i in month t is

    clip(b0 + sum_k theta_k x_{k,i,t-lag}, beta_min, beta_max)

and daily excess returns are r_i = beta_{i,month} r_m + eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .panel_store import (
    PREDICTOR_GROUPS,
    CharacteristicPanel,
    MonthlyMeta,
    PanelError,
    ReturnPanel,
)


@dataclass(frozen=True)
class DgpConfig:
    n_assets: int = 50
    n_months: int = 150
    seed: int = 0
    start_month: str = "1980-01"
    days_per_month: int = 21
    market_mean: float = 0.0003
    market_vol: float = 0.01
    beta_intercept: float = 1.0
    beta_link: tuple = (0.3, -0.2, 0.15)
    persistence: float = 0.9
    beta_lag: int = 1
    beta_bounds: tuple = (-1.0, 4.0)
    idio_vol: float | tuple = 0.01  # scalar or (low, high) range drawn per asset
    noise_chars: int = 5
    # group label per characteristic; default cycles through the six groups
    groups: tuple | None = None
    missing_rate: float = 0.0
    late_entry_fraction: float = 0.0
    dcf_premium: float = 0.10
    dcf_growth: float = 0.01
    price_noise: float = 0.05

    def __post_init__(self):
        if self.n_assets < 1 or self.n_months < 1:
            raise PanelError("synthetic panel needs at least one asset and one month")
        if self.days_per_month < 1:
            raise PanelError("days_per_month must be positive")
        if not 0 <= self.persistence < 1:
            raise PanelError("persistence must lie in [0, 1)")

    @property
    def n_chars(self) -> int:
        return len(self.beta_link) + self.noise_chars

    def char_names(self) -> tuple:
        return tuple(f"sig{k + 1}" for k in range(len(self.beta_link))) + tuple(
            f"noise{k + 1}" for k in range(self.noise_chars)
        )

    def group_map(self) -> dict:
        names = self.char_names()
        groups = self.groups or tuple(PREDICTOR_GROUPS[k % len(PREDICTOR_GROUPS)] for k in range(len(names)))
        if len(groups) != len(names):
            raise PanelError("need one group label per characteristic")
        return dict(zip(names, groups))


@dataclass(frozen=True)
class SyntheticData:
    returns: ReturnPanel
    chars: CharacteristicPanel
    true_beta: np.ndarray  # (n_months, n_assets)
    meta: MonthlyMeta
    cash_flow: np.ndarray  # (n_months, n_assets) monthly dividend
    config: DgpConfig = field(repr=False)

    @property
    def months(self) -> np.ndarray:
        return self.chars.months


def _trading_days(month: np.datetime64, limit: int) -> np.ndarray:
    first = month.astype("datetime64[D]")
    nxt = (month + np.timedelta64(1, "M")).astype("datetime64[D]")
    days = np.arange(first, nxt)
    days = days[np.is_busday(days)]
    return days[:limit]


def generate(cfg: DgpConfig) -> SyntheticData:
    """Draw one synthetic world; identical configs give identical panels."""
    root = np.random.SeedSequence(cfg.seed)
    s_chars, s_mkt, s_idio, s_meta, s_misc = (np.random.Generator(np.random.Philox(s)) for s in root.spawn(5))
    N, T, P, lag = cfg.n_assets, cfg.n_months, cfg.n_chars, cfg.beta_lag

    # characteristics, with `lag` burn-in months feeding the first betas
    total = T + lag
    x = np.empty((total, N, P))
    x[0] = s_chars.standard_normal((N, P))
    innov_scale = math.sqrt(1.0 - cfg.persistence ** 2)
    for t in range(1, total):
        x[t] = cfg.persistence * x[t - 1] + innov_scale * s_chars.standard_normal((N, P))
    x = (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, keepdims=True)

    theta = np.asarray(cfg.beta_link, dtype=float)
    k = theta.size
    beta = cfg.beta_intercept + x[:T, :, :k] @ theta if k else np.full((T, N), cfg.beta_intercept)
    beta = np.clip(beta, *cfg.beta_bounds)
    chars = x[lag:]

    start = np.datetime64(cfg.start_month, "M")
    months = start + np.arange(T).astype("timedelta64[M]")
    day_lists = [_trading_days(m, cfg.days_per_month) for m in months]
    dates = np.concatenate(day_lists)
    month_of_day = np.repeat(np.arange(T), [d.size for d in day_lists])

    rm = cfg.market_mean + cfg.market_vol * s_mkt.standard_normal(dates.size)
    if isinstance(cfg.idio_vol, (tuple, list)):
        vols = s_idio.uniform(cfg.idio_vol[0], cfg.idio_vol[1], size=N)
    else:
        vols = np.full(N, float(cfg.idio_vol))
    eps = s_idio.standard_normal((dates.size, N)) * vols
    rets = beta[month_of_day] * rm[:, None] + eps

    present = np.ones((T, N), dtype=bool)
    if cfg.late_entry_fraction > 0:
        late = s_misc.random(N) < cfg.late_entry_fraction
        entry = np.where(late, s_misc.integers(1, max(2, T // 2), size=N), 0)
        for j in np.flatnonzero(late):
            present[: entry[j], j] = False
            rets[month_of_day < entry[j], j] = np.nan
    char_vals = chars.copy()
    char_vals[~present] = np.nan
    if cfg.missing_rate > 0:
        drop = (s_misc.random(char_vals.shape) < cfg.missing_rate) & present[:, :, None]
        char_vals[drop] = np.nan

    ids = tuple(f"A{j:04d}" for j in range(N))
    rp = ReturnPanel(ids, dates, rets, rm)
    cp = CharacteristicPanel(months, ids, char_vals, present, cfg.char_names(), cfg.group_map())

    # monthly price / volume / cap and dividend cash flows
    log_cap = s_meta.normal(6.0, 1.5, size=N)[None, :] + np.cumsum(0.05 * s_meta.standard_normal((T, N)), axis=0)
    cap = np.exp(log_cap)
    volume = np.where(s_meta.random((T, N)) < 0.02, 0.0, np.exp(s_meta.normal(10, 1, size=(T, N))))
    payer = s_meta.random(N) < 0.8
    level = np.exp(s_meta.normal(-2.0, 0.7, size=N))[None, :]
    cash_flow = np.where(payer[None, :], level * np.exp(np.cumsum(0.02 * s_meta.standard_normal((T, N)), axis=0)), 0.0)
    # prices: DCF value at the true beta (10% premium, 1% growth) with pricing noise;
    # where that is undefined, a generic lognormal level
    price = np.exp(s_meta.normal(3.0, 0.8, size=N))[None, :] * np.exp(0.05 * s_meta.standard_normal((T, N)))
    r = beta * cfg.dcf_premium / 12.0
    g = cfg.dcf_growth / 12.0
    valid = payer[None, :] & (r > g + 1e-4)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = (1.0 + r[..., None]) ** -np.arange(1, 13)
        pv = cash_flow * (disc.sum(axis=-1) + disc[..., -1] / (r - g))
    noise = np.exp(cfg.price_noise * s_meta.standard_normal((T, N)))
    price = np.where(valid, pv * noise, price)
    for arr in (cap, price, volume, cash_flow):
        arr[~present] = np.nan
    meta = MonthlyMeta(months, ids, price, volume, cap)
    return SyntheticData(rp, cp, beta, meta, cash_flow, cfg)
