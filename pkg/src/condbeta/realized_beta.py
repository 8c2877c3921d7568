"""Realized CAPM beta, downside/upside betas and the four semibetas.

All estimators are built from daily excess returns over an h-month window.
Discordant semibetas are stored negated so that every semibeta is weakly
positive; ``reconstruct_from_semibetas`` undoes that sign.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .panel_store import PanelError, ReturnPanel, month_str, to_month

MIN_OBS = {1: 15, 3: 50, 6: 100, 12: 200}
HORIZONS = (1, 3, 6, 12)


class BetaKind(str, enum.Enum):
    Capm = "Capm"
    Down = "Down"
    Up = "Up"
    SemiN = "SemiN"
    SemiP = "SemiP"
    SemiMNeg = "SemiMNeg"
    SemiMPos = "SemiMPos"

    def __str__(self) -> str:
        return self.value


ALL_KINDS = tuple(BetaKind)
SEMI_KINDS = (BetaKind.SemiN, BetaKind.SemiP, BetaKind.SemiMNeg, BetaKind.SemiMPos)


class UndefinedBetaError(ArithmeticError):
    """The market sum of squares over the window is zero."""


def _aligned(r_i, r_m):
    r_i = np.asarray(r_i, dtype=float)
    r_m = np.asarray(r_m, dtype=float)
    if r_i.shape != r_m.shape or r_i.ndim != 1 or r_i.size < 1:
        raise ValueError("r_i and r_m must be aligned 1-D vectors of length >= 1")
    return r_i, r_m


def realized_capm(r_i, r_m) -> float:
    r_i, r_m = _aligned(r_i, r_m)
    den = np.dot(r_m, r_m)
    if den <= 0.0:
        raise UndefinedBetaError("sum of squared market returns is zero")
    return float(np.dot(r_i, r_m) / den)


def realized_down_up(r_i, r_m) -> tuple[float, float]:
    """Downside and upside betas with a zero cutoff.

    A side whose market sum of squares is zero comes back as NaN.
    """
    r_i, r_m = _aligned(r_i, r_m)
    m_neg = np.minimum(r_m, 0.0)
    m_pos = np.maximum(r_m, 0.0)
    d_neg = np.dot(m_neg, m_neg)
    d_pos = np.dot(m_pos, m_pos)
    down = np.dot(r_i, m_neg) / d_neg if d_neg > 0 else np.nan
    up = np.dot(r_i, m_pos) / d_pos if d_pos > 0 else np.nan
    return float(down), float(up)


def realized_semibetas(r_i, r_m) -> tuple[float, float, float, float]:
    """(N, P, M-, M+) semibetas; the two discordant ones are returned negated."""
    r_i, r_m = _aligned(r_i, r_m)
    den = np.dot(r_m, r_m)
    if den <= 0.0:
        raise UndefinedBetaError("sum of squared market returns is zero")
    i_neg, i_pos = np.minimum(r_i, 0.0), np.maximum(r_i, 0.0)
    m_neg, m_pos = np.minimum(r_m, 0.0), np.maximum(r_m, 0.0)
    n = np.dot(i_neg, m_neg) / den
    p = np.dot(i_pos, m_pos) / den
    mneg = -np.dot(i_pos, m_neg) / den
    mpos = -np.dot(i_neg, m_pos) / den
    return float(n), float(p), float(mneg), float(mpos)


def reconstruct_from_down_up(beta_down: float, beta_up: float, r_m) -> float:
    """CAPM beta as the variance-share weighted mix of downside and upside beta."""
    r_m = np.asarray(r_m, dtype=float)
    den = np.dot(r_m, r_m)
    if den <= 0.0:
        raise UndefinedBetaError("sum of squared market returns is zero")
    m_neg = np.minimum(r_m, 0.0)
    m_pos = np.maximum(r_m, 0.0)
    w_down = np.dot(m_neg, m_neg) / den
    w_up = np.dot(m_pos, m_pos) / den
    # a side with zero weight contributes nothing even if undefined
    out = 0.0
    if w_down > 0:
        out += beta_down * w_down
    if w_up > 0:
        out += beta_up * w_up
    return float(out)


def reconstruct_from_semibetas(n: float, p: float, mneg: float, mpos: float) -> float:
    return n + p - mneg - mpos


def down_up_weights(sum_sq_down, sum_sq_up):
    """Variance shares of the down and up market states (vectorised)."""
    tot = np.asarray(sum_sq_down) + np.asarray(sum_sq_up)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sum_sq_down / tot, sum_sq_up / tot


# --------------------------------------------------------------------------
# panel computation


@dataclass(frozen=True)
class RealizedBetaPanel:
    """Monthly realized betas.

    ``values[(kind, h)]`` and ``obs_counts[h]`` are (n_months x n_assets)
    arrays; NaN marks an absent entry. ``market_sq[(h, side)]`` keeps the
    window's market sums of squares (side in {"down", "up"}) per asset so
    CAPM beta can be rebuilt from down/up components downstream.
    """

    months: np.ndarray
    asset_ids: tuple[str, ...]
    values: dict
    obs_counts: dict
    market_sq: dict = field(default_factory=dict)

    def get(self, kind, h: int) -> np.ndarray:
        return self.values[(BetaKind(kind), int(h))]

    @property
    def kinds(self) -> tuple:
        return tuple(sorted({k for k, _ in self.values}, key=ALL_KINDS.index))

    @property
    def horizons(self) -> tuple:
        return tuple(sorted({h for _, h in self.values}))

    def month_position(self, month) -> int:
        m = to_month(month)
        k = int(np.searchsorted(self.months, m))
        if k >= self.months.size or self.months[k] != m:
            raise KeyError(month_str(m))
        return k

    def entries(self):
        """Yield (asset_id, month, kind, h, beta, n_obs) for every present entry."""
        for (kind, h) in sorted(self.values, key=lambda kh: (kh[1], ALL_KINDS.index(kh[0]))):
            arr = self.values[(kind, h)]
            cnt = self.obs_counts[h]
            for t, j in zip(*np.nonzero(np.isfinite(arr))):
                yield self.asset_ids[j], self.months[t], kind, h, float(arr[t, j]), int(cnt[t, j])


def _window_sums(r: np.ndarray, m: np.ndarray):
    """Masked sums over a (days x assets) block; NaN returns are skipped."""
    ok = np.isfinite(r)
    r0 = np.where(ok, r, 0.0)
    mm = np.where(ok, m[:, None], 0.0)
    m_neg, m_pos = np.minimum(mm, 0.0), np.maximum(mm, 0.0)
    i_neg, i_pos = np.minimum(r0, 0.0), np.maximum(r0, 0.0)
    return {
        "n": ok.sum(axis=0),
        "mm": (mm * mm).sum(axis=0),
        "mm_neg": (m_neg * m_neg).sum(axis=0),
        "mm_pos": (m_pos * m_pos).sum(axis=0),
        "im": (r0 * mm).sum(axis=0),
        "im_neg": (r0 * m_neg).sum(axis=0),
        "im_pos": (r0 * m_pos).sum(axis=0),
        "nn": (i_neg * m_neg).sum(axis=0),
        "pp": (i_pos * m_pos).sum(axis=0),
        "pn": (i_pos * m_neg).sum(axis=0),
        "np": (i_neg * m_pos).sum(axis=0),
    }


def compute_beta_panel(
    rp: ReturnPanel,
    kinds=ALL_KINDS,
    horizons=HORIZONS,
    min_obs: dict | None = None,
) -> RealizedBetaPanel:
    """Realized betas for every month and horizon.

    The beta for month t at horizon h uses the daily returns of months
    t-h+1..t. Cells with fewer than ``min_obs[h]`` daily observations, or
    a zero market denominator, are left absent.
    """
    kinds = tuple(BetaKind(k) for k in kinds)
    min_obs = dict(MIN_OBS if min_obs is None else min_obs)
    bounds = rp.month_bounds()
    months = np.array(sorted(bounds), dtype="datetime64[M]")
    n_m, n_a = months.size, len(rp.asset_ids)
    values = {(k, h): np.full((n_m, n_a), np.nan) for k in kinds for h in horizons}
    counts = {h: np.zeros((n_m, n_a), dtype=int) for h in horizons}
    market_sq = {(h, s): np.full((n_m, n_a), np.nan) for h in horizons for s in ("down", "up")}
    month_set = set(bounds)

    for h in horizons:
        if h not in min_obs:
            raise PanelError(f"no minimum-observation rule for horizon {h}")
        for t, m in enumerate(months):
            first = m - np.timedelta64(h - 1, "M")
            window = [mm for mm in (first + np.timedelta64(k, "M") for k in range(h)) if mm in month_set]
            a = bounds[window[0]][0]
            b = bounds[window[-1]][1]
            s = _window_sums(rp.returns[a:b], rp.market_returns[a:b])
            counts[h][t] = s["n"]
            ok = (s["n"] >= min_obs[h]) & (s["mm"] > 0)
            market_sq[(h, "down")][t] = np.where(ok, s["mm_neg"], np.nan)
            market_sq[(h, "up")][t] = np.where(ok, s["mm_pos"], np.nan)
            with np.errstate(invalid="ignore", divide="ignore"):
                den = np.where(ok, s["mm"], np.nan)
                cells = {
                    BetaKind.Capm: s["im"] / den,
                    BetaKind.Down: np.where(s["mm_neg"] > 0, s["im_neg"] / s["mm_neg"], np.nan),
                    BetaKind.Up: np.where(s["mm_pos"] > 0, s["im_pos"] / s["mm_pos"], np.nan),
                    BetaKind.SemiN: s["nn"] / den,
                    BetaKind.SemiP: s["pp"] / den,
                    BetaKind.SemiMNeg: -s["pn"] / den,
                    BetaKind.SemiMPos: -s["np"] / den,
                }
            for k in kinds:
                values[(k, h)][t] = np.where(ok, cells[k], np.nan)
    return RealizedBetaPanel(months, rp.asset_ids, values, counts, market_sq)


def reconstruct_capm_down_up(panel: RealizedBetaPanel, down, up, h: int) -> np.ndarray:
    """CAPM beta from (forecast) down/up arrays, weighted by each cell's
    realized down/up market variance shares over the same window."""
    w_down, w_up = down_up_weights(panel.market_sq[(h, "down")], panel.market_sq[(h, "up")])
    return np.where(w_down > 0, down * w_down, 0.0) + np.where(w_up > 0, up * w_up, 0.0)


def descriptive_stats(panel: RealizedBetaPanel, h: int, kinds=None) -> dict:
    """Time-series averages of cross-sectional mean, median, std and the
    cross-sectional correlation matrix between kinds."""
    kinds = tuple(BetaKind(k) for k in (kinds or panel.kinds))
    stats = {}
    for k in kinds:
        arr = panel.get(k, h)
        rows = [r[np.isfinite(r)] for r in arr]
        rows = [r for r in rows if r.size >= 2]
        if not rows:
            continue
        stats[k.value] = {
            "mean": float(np.mean([r.mean() for r in rows])),
            "median": float(np.mean([np.median(r) for r in rows])),
            "std": float(np.mean([r.std(ddof=1) for r in rows])),
        }
    corr = np.full((len(kinds), len(kinds)), np.nan)
    stack = np.stack([panel.get(k, h) for k in kinds])
    for a in range(len(kinds)):
        for b in range(len(kinds)):
            cs = []
            for t in range(stack.shape[1]):
                x, y = stack[a, t], stack[b, t]
                ok = np.isfinite(x) & np.isfinite(y)
                if ok.sum() >= 3 and x[ok].std() > 0 and y[ok].std() > 0:
                    cs.append(np.corrcoef(x[ok], y[ok])[0, 1])
            if cs:
                corr[a, b] = np.mean(cs)
    return {"moments": stats, "kinds": [k.value for k in kinds], "correlation": corr.tolist()}


# --------------------------------------------------------------------------
# delimited text


def write_beta_panel(panel: RealizedBetaPanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "month", "kind", "horizon", "beta", "n_obs"])
        for aid, m, kind, h, beta, n in panel.entries():
            w.writerow([aid, month_str(m), kind.value, h, repr(beta), n])
    sq_path = Path(path).with_suffix(".mktsq.csv")
    with open(sq_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "month", "horizon", "sumsq_down", "sumsq_up"])
        for h in panel.horizons:
            dn, up = panel.market_sq[(h, "down")], panel.market_sq[(h, "up")]
            for t, j in zip(*np.nonzero(np.isfinite(dn))):
                w.writerow([panel.asset_ids[j], month_str(panel.months[t]), h, repr(float(dn[t, j])), repr(float(up[t, j]))])


def read_beta_panel(path) -> RealizedBetaPanel:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        for aid, m, kind, h, beta, n in r:
            rows.append((aid, to_month(m), BetaKind(kind), int(h), float(beta), int(n)))
    months = np.array(sorted({r[1] for r in rows}), dtype="datetime64[M]")
    ids = tuple(sorted({r[0] for r in rows}))
    pm = {m: i for i, m in enumerate(months)}
    pa = {a: i for i, a in enumerate(ids)}
    values, counts = {}, {}
    for aid, m, kind, h, beta, n in rows:
        if (kind, h) not in values:
            values[(kind, h)] = np.full((months.size, len(ids)), np.nan)
        if h not in counts:
            counts[h] = np.zeros((months.size, len(ids)), dtype=int)
        values[(kind, h)][pm[m], pa[aid]] = beta
        counts[h][pm[m], pa[aid]] = n
    market_sq = {}
    sq_path = Path(path).with_suffix(".mktsq.csv")
    if sq_path.exists():
        with open(sq_path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            next(r)
            for aid, m, h, dn, up in r:
                h = int(h)
                for side, v in (("down", dn), ("up", up)):
                    arr = market_sq.setdefault((h, side), np.full((months.size, len(ids)), np.nan))
                    mm = to_month(m)
                    if mm in pm and aid in pa:
                        arr[pm[mm], pa[aid]] = float(v)
    return RealizedBetaPanel(months, ids, values, counts, market_sq)
