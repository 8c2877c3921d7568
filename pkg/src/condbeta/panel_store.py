"""Daily-return and monthly-characteristic panels.

Loading, validation, universe filtering, cross-sectional preprocessing and
predictor lagging. Every other module consumes the two panel types defined
here. Panels are immutable once built: their arrays are flagged read-only.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PREDICTOR_GROUPS = (
    "Intangibles",
    "Investment",
    "Momentum",
    "Profitability",
    "TradingFrictions",
    "ValueVsGrowth",
)


class PanelError(ValueError):
    """Raised when an input panel violates its schema or invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def to_month(value) -> np.datetime64:
    """Parse ``YYYY-MM`` (or a full ISO date) into a ``datetime64[M]``."""
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[M]")
    text = str(value).strip()
    if len(text) == 7:
        return np.datetime64(text, "M")
    return np.datetime64(text, "D").astype("datetime64[M]")


def month_str(m: np.datetime64) -> str:
    return str(np.datetime64(m, "M"))


@dataclass(frozen=True)
class ReturnPanel:
    """Daily excess returns for a set of assets plus the market.

    ``returns`` has shape (n_dates, n_assets) with NaN marking a missing
    observation. ``market_returns`` is never missing.
    """

    asset_ids: tuple[str, ...]
    dates: np.ndarray
    returns: np.ndarray
    market_returns: np.ndarray
    _asset_pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        rets = np.asarray(self.returns, dtype=float)
        mkt = np.asarray(self.market_returns, dtype=float)
        ids = tuple(str(a) for a in self.asset_ids)
        if rets.ndim != 2 or rets.shape != (dates.size, len(ids)):
            raise PanelError(
                f"returns shape {rets.shape} does not match "
                f"({dates.size} dates, {len(ids)} assets)"
            )
        if mkt.shape != (dates.size,):
            raise PanelError("market series must align with dates")
        if dates.size > 1 and not np.all(np.diff(dates) > np.timedelta64(0, "D")):
            raise PanelError("dates must be strictly increasing without duplicates")
        if not np.all(np.isfinite(mkt)):
            bad = dates[~np.isfinite(mkt)]
            raise PanelError(f"market return missing on listed date(s): {bad[:5].tolist()}")
        if np.any(np.isinf(rets)):
            raise PanelError("asset returns must be finite or NaN (missing)")
        if len(set(ids)) != len(ids):
            raise PanelError("duplicate asset identifiers")
        object.__setattr__(self, "asset_ids", ids)
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "returns", _frozen(rets))
        object.__setattr__(self, "market_returns", _frozen(mkt))
        object.__setattr__(self, "_asset_pos", {a: i for i, a in enumerate(ids)})

    @property
    def month_index(self) -> np.ndarray:
        """Calendar month of every date."""
        return self.dates.astype("datetime64[M]")

    @property
    def months(self) -> np.ndarray:
        return np.unique(self.month_index)

    def month_bounds(self) -> dict:
        """Map month -> (start, stop) row slice bounds; months are contiguous."""
        mi = self.month_index
        months, starts = np.unique(mi, return_index=True)
        stops = np.append(starts[1:], mi.size)
        return {m: (int(a), int(b)) for m, a, b in zip(months, starts, stops)}

    def asset_position(self, asset_id: str) -> int:
        return self._asset_pos[asset_id]

    def monthly_availability(self) -> tuple[np.ndarray, np.ndarray]:
        """(months, bool array n_months x n_assets): month has >= 1 daily return."""
        bounds = self.month_bounds()
        months = np.array(sorted(bounds), dtype="datetime64[M]")
        avail = np.zeros((months.size, len(self.asset_ids)), dtype=bool)
        for k, m in enumerate(months):
            a, b = bounds[m]
            avail[k] = np.any(np.isfinite(self.returns[a:b]), axis=0)
        return months, avail


@dataclass(frozen=True)
class CharacteristicPanel:
    """Monthly (asset x predictor) values.

    ``values`` has shape (n_months, n_assets, P); ``present`` marks which
    assets report in a month. A NaN inside a present row is a missing cell.
    ``lag_applied`` records how many months the values were shifted forward,
    so the value stored at month t was observed at month t - lag_applied.
    """

    months: np.ndarray
    asset_ids: tuple[str, ...]
    values: np.ndarray
    present: np.ndarray
    predictor_names: tuple[str, ...]
    predictor_groups: Mapping[str, str]
    lag_applied: int = 0

    def __post_init__(self):
        months = np.asarray(self.months, dtype="datetime64[M]")
        vals = np.asarray(self.values, dtype=float)
        present = np.asarray(self.present, dtype=bool)
        names = tuple(self.predictor_names)
        ids = tuple(str(a) for a in self.asset_ids)
        if vals.shape != (months.size, len(ids), len(names)):
            raise PanelError(
                f"values shape {vals.shape} != ({months.size}, {len(ids)}, {len(names)})"
            )
        if present.shape != vals.shape[:2]:
            raise PanelError("present mask must be (n_months, n_assets)")
        if months.size > 1 and not np.all(np.diff(months) > np.timedelta64(0, "M")):
            raise PanelError("months must be strictly increasing")
        missing = [p for p in names if p not in self.predictor_groups]
        if missing:
            raise PanelError(f"predictor(s) without group assignment: {', '.join(missing)}")
        bad = {p: g for p, g in self.predictor_groups.items() if g not in PREDICTOR_GROUPS}
        if bad:
            raise PanelError(f"unknown predictor group(s): {bad}")
        groups = {p: self.predictor_groups[p] for p in names}
        object.__setattr__(self, "months", _frozen(months))
        object.__setattr__(self, "asset_ids", ids)
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "present", _frozen(present))
        object.__setattr__(self, "predictor_names", names)
        object.__setattr__(self, "predictor_groups", groups)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values) & self.present[:, :, None]

    def group_columns(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {g: [] for g in PREDICTOR_GROUPS}
        for j, p in enumerate(self.predictor_names):
            out[self.predictor_groups[p]].append(j)
        return out

    def month_position(self, month) -> int:
        m = to_month(month)
        k = int(np.searchsorted(self.months, m))
        if k >= self.months.size or self.months[k] != m:
            raise KeyError(month_str(m))
        return k


@dataclass(frozen=True)
class UniverseFilter:
    min_price: float = 5.0
    require_positive_volume: bool = True
    market_cap_percentile: float = 0.2
    # None = every asset serves as reference; otherwise a set of asset ids
    percentile_reference: frozenset | None = None

    def __post_init__(self):
        if not 0.0 <= self.market_cap_percentile <= 1.0:
            raise PanelError("market_cap_percentile must lie in [0, 1]")


# --------------------------------------------------------------------------
# loading


def _open_rows(path, delimiter):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    fh = path.open(newline="", encoding="utf-8")
    return fh, csv.reader(fh, delimiter=delimiter)


def _read_market(path, delimiter):
    fh, reader = _open_rows(path, delimiter)
    with fh:
        next(reader, None)
        out = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                d = np.datetime64(row[0].strip(), "D")
            except ValueError:
                logger.warning("%s:%d unparseable date %r rejected", path, lineno, row[0])
                continue
            if d in out:
                raise PanelError(f"{path}: duplicate market date {d} at row {lineno}")
            out[d] = float(row[1])
    return out


def load_daily_returns(
    path,
    market_path=None,
    *,
    market_id: str | None = None,
    riskfree_path=None,
    delimiter: str = ",",
) -> ReturnPanel:
    """Load a long-format daily return file into a :class:`ReturnPanel`.

    The market series comes either from ``market_path`` (columns date, ret)
    or from rows of the main file whose asset id equals ``market_id``. An
    optional risk-free file (date, rf) is subtracted from every series.
    """
    if market_path is None and market_id is None:
        raise PanelError("missing market series: give market_path or market_id")

    fh, reader = _open_rows(path, delimiter)
    cells: dict[tuple[str, np.datetime64], float] = {}
    first_row: dict[tuple[str, np.datetime64], int] = {}
    market: dict[np.datetime64, float] = {}
    with fh:
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                d = np.datetime64(row[0].strip(), "D")
            except ValueError:
                logger.warning("%s:%d unparseable date %r rejected", path, lineno, row[0])
                continue
            aid = row[1].strip()
            text = row[2].strip() if len(row) > 2 else ""
            val = float(text) if text else np.nan
            if market_id is not None and aid == market_id:
                if d in market:
                    raise PanelError(f"{path}: duplicate market date {d} at row {lineno}")
                market[d] = val
                continue
            key = (aid, d)
            if key in cells:
                raise PanelError(
                    f"{path}: duplicate (asset, date) ({aid}, {d}) at rows "
                    f"{first_row[key]} and {lineno}"
                )
            cells[key] = val
            first_row[key] = lineno

    if market_path is not None:
        market = _read_market(market_path, delimiter)
    if not market:
        raise PanelError("missing market series: no market observations found")

    asset_ids = sorted({a for a, _ in cells})
    dates = np.array(sorted({d for _, d in cells} | set(market)), dtype="datetime64[D]")
    missing = [d for d in dates if d not in market or not np.isfinite(market[d])]
    if missing:
        raise PanelError(f"missing market return for listed date(s): {[str(d) for d in missing[:5]]}")

    pos_a = {a: i for i, a in enumerate(asset_ids)}
    pos_d = {d: i for i, d in enumerate(dates)}
    rets = np.full((dates.size, len(asset_ids)), np.nan)
    for (a, d), v in cells.items():
        rets[pos_d[d], pos_a[a]] = v
    mkt = np.array([market[d] for d in dates])

    if riskfree_path is not None:
        rf = _read_market(riskfree_path, delimiter)
        absent = [d for d in dates if d not in rf]
        if absent:
            raise PanelError(f"risk-free series missing date(s): {[str(d) for d in absent[:5]]}")
        rfv = np.array([rf[d] for d in dates])
        rets = rets - rfv[:, None]
        mkt = mkt - rfv

    return ReturnPanel(tuple(asset_ids), dates, rets, mkt)


def load_group_map(path, delimiter: str = ",") -> dict[str, str]:
    fh, reader = _open_rows(path, delimiter)
    out = {}
    with fh:
        next(reader, None)
        for row in reader:
            if row:
                out[row[0].strip()] = row[1].strip()
    return out


def load_characteristics(path, group_map_path, delimiter: str = ",") -> CharacteristicPanel:
    """Load (month, asset_id, <predictors...>) rows plus a predictor->group map.

    Blank cells are kept as missing; nothing is filled here.
    """
    groups = load_group_map(group_map_path, delimiter)
    fh, reader = _open_rows(path, delimiter)
    with fh:
        header = next(reader)
        names = [h.strip() for h in header[2:]]
        unmapped = [p for p in names if p not in groups]
        if unmapped:
            raise PanelError(f"predictor(s) without group assignment: {', '.join(unmapped)}")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            m = to_month(row[0])
            aid = row[1].strip()
            if (m, aid) in rows:
                raise PanelError(f"{path}: duplicate (month, asset) ({month_str(m)}, {aid}) at row {lineno}")
            rows[(m, aid)] = [float(c) if c.strip() else np.nan for c in row[2:]]

    months = np.array(sorted({m for m, _ in rows}), dtype="datetime64[M]")
    asset_ids = sorted({a for _, a in rows})
    pos_m = {m: i for i, m in enumerate(months)}
    pos_a = {a: i for i, a in enumerate(asset_ids)}
    vals = np.full((months.size, len(asset_ids), len(names)), np.nan)
    present = np.zeros((months.size, len(asset_ids)), dtype=bool)
    for (m, a), v in rows.items():
        vals[pos_m[m], pos_a[a]] = v
        present[pos_m[m], pos_a[a]] = True
    return CharacteristicPanel(
        months, tuple(asset_ids), vals, present, tuple(names),
        {p: groups[p] for p in names},
    )


@dataclass(frozen=True)
class MonthlyMeta:
    """Per-(month, asset) price, volume and market capitalisation."""

    months: np.ndarray
    asset_ids: tuple[str, ...]
    price: np.ndarray
    volume: np.ndarray
    mktcap: np.ndarray

    def aligned(self, months: np.ndarray, asset_ids: Sequence[str]):
        """Return (price, volume, mktcap) reindexed to ``months`` x ``asset_ids``."""
        pm = {m: i for i, m in enumerate(self.months)}
        pa = {a: i for i, a in enumerate(self.asset_ids)}
        out = []
        for arr in (self.price, self.volume, self.mktcap):
            res = np.full((len(months), len(asset_ids)), np.nan)
            for i, m in enumerate(months):
                if m not in pm:
                    continue
                for j, a in enumerate(asset_ids):
                    if a in pa:
                        res[i, j] = arr[pm[m], pa[a]]
            out.append(res)
        return tuple(out)


def load_monthly_meta(path, delimiter: str = ",") -> MonthlyMeta:
    fh, reader = _open_rows(path, delimiter)
    with fh:
        next(reader, None)
        rows = {}
        for row in reader:
            if row:
                rows[(to_month(row[0]), row[1].strip())] = tuple(
                    float(c) if c.strip() else np.nan for c in row[2:5]
                )
    months = np.array(sorted({m for m, _ in rows}), dtype="datetime64[M]")
    ids = sorted({a for _, a in rows})
    pm = {m: i for i, m in enumerate(months)}
    pa = {a: i for i, a in enumerate(ids)}
    arrs = np.full((3, months.size, len(ids)), np.nan)
    for (m, a), v in rows.items():
        arrs[:, pm[m], pa[a]] = v
    return MonthlyMeta(months, tuple(ids), arrs[0], arrs[1], arrs[2])


# --------------------------------------------------------------------------
# writing (the same formats the loaders read)


def write_daily_returns(rp: ReturnPanel, path, market_path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["date", "asset_id", "ret"])
        for j, aid in enumerate(rp.asset_ids):
            col = rp.returns[:, j]
            for d, v in zip(rp.dates, col):
                if np.isfinite(v):
                    w.writerow([str(d), aid, repr(float(v))])
    with open(market_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["date", "ret"])
        for d, v in zip(rp.dates, rp.market_returns):
            w.writerow([str(d), repr(float(v))])


def write_characteristics(cp: CharacteristicPanel, path, group_map_path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["month", "asset_id", *cp.predictor_names])
        for i, m in enumerate(cp.months):
            for j, aid in enumerate(cp.asset_ids):
                if not cp.present[i, j]:
                    continue
                w.writerow([month_str(m), aid, *("" if np.isnan(v) else repr(float(v)) for v in cp.values[i, j])])
    with open(group_map_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["predictor", "group"])
        for p in cp.predictor_names:
            w.writerow([p, cp.predictor_groups[p]])


def write_monthly_meta(meta: MonthlyMeta, path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["month", "asset_id", "price", "volume", "mktcap"])
        for i, m in enumerate(meta.months):
            for j, aid in enumerate(meta.asset_ids):
                vals = (meta.price[i, j], meta.volume[i, j], meta.mktcap[i, j])
                if all(np.isnan(v) for v in vals):
                    continue
                w.writerow([month_str(m), aid, *("" if np.isnan(v) else repr(float(v)) for v in vals)])


# --------------------------------------------------------------------------
# transformations


def apply_universe_filters(
    months: np.ndarray,
    asset_ids: Sequence[str],
    prices: np.ndarray,
    volumes: np.ndarray,
    caps: np.ndarray,
    f: UniverseFilter,
) -> np.ndarray:
    """Per-month eligibility mask of shape (n_months, n_assets).

    An asset is eligible when its price is strictly above ``min_price``, its
    volume is positive (if required) and its market cap is at least the
    ``market_cap_percentile`` quantile of the reference assets' caps that
    month. Missing inputs make a cell ineligible.
    """
    prices = np.asarray(prices, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    caps = np.asarray(caps, dtype=float)
    shape = (len(months), len(asset_ids))
    for name, arr in (("prices", prices), ("volumes", volumes), ("caps", caps)):
        if arr.shape != shape:
            raise PanelError(f"{name} shape {arr.shape} != {shape}")

    if f.percentile_reference is None:
        ref_cols = np.ones(len(asset_ids), dtype=bool)
    else:
        ref_cols = np.array([a in f.percentile_reference for a in asset_ids])

    with np.errstate(invalid="ignore"):
        ok = prices > f.min_price
        if f.require_positive_volume:
            ok &= volumes > 0
    for t in range(shape[0]):
        ref = caps[t, ref_cols]
        ref = ref[np.isfinite(ref)]
        if ref.size == 0:
            warnings.warn(
                f"empty market-cap reference universe in {month_str(months[t])}; "
                "threshold set to -inf",
                stacklevel=2,
            )
            threshold = -np.inf
        else:
            threshold = np.quantile(ref, f.market_cap_percentile, method="linear")
        with np.errstate(invalid="ignore"):
            ok[t] &= caps[t] >= threshold
    return ok


def _standardize_month(x: np.ndarray, winsor) -> np.ndarray:
    """Impute, winsorize and z-score one month's (n_assets x P) block."""
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        col = x[:, j].copy()
        miss = np.isnan(col)
        if miss.all():
            out[:, j] = 0.0
            continue
        if miss.any():
            col[miss] = np.median(col[~miss])
        if winsor is not None:
            lo, hi = np.quantile(col, winsor, method="linear")
            col = np.clip(col, lo, hi)
        mu = col.mean()
        sd = col.std()
        if sd == 0.0 or np.ptp(col) == 0.0:
            out[:, j] = 0.0
        else:
            out[:, j] = (col - mu) / sd
    return out


def preprocess_characteristics(
    cp: CharacteristicPanel, winsor: tuple[float, float] | None = (0.005, 0.995)
) -> CharacteristicPanel:
    """Median-impute, winsorize and cross-sectionally standardize each month.

    Standardization uses the population standard deviation; constant columns
    become zeros, as do columns missing for every asset in a month.
    """
    vals = np.array(cp.values, dtype=float)
    for t in range(cp.months.size):
        rows = np.flatnonzero(cp.present[t])
        if rows.size == 0:
            raise PanelError(f"month {month_str(cp.months[t])} has no assets")
        vals[t, rows] = _standardize_month(vals[t, rows], winsor)
    return replace(cp, values=vals)


def lag_predictors(cp: CharacteristicPanel, h: int) -> CharacteristicPanel:
    """Shift predictors forward by ``h`` calendar months.

    The returned panel's row for month t holds the values observed at
    month t - h. Months without an h-month-earlier source are dropped.
    """
    if h <= 0:
        raise PanelError(f"lag must be positive, got {h}")
    pos = {m: i for i, m in enumerate(cp.months)}
    keep_dst, keep_src = [], []
    for i, m in enumerate(cp.months):
        src = m - np.timedelta64(h, "M")
        if src in pos:
            keep_dst.append(i)
            keep_src.append(pos[src])
    if not keep_dst:
        raise PanelError(f"lag of {h} months leaves an empty panel")
    src = np.array(keep_src)
    return replace(
        cp,
        months=cp.months[np.array(keep_dst)],
        values=cp.values[src],
        present=cp.present[src],
        lag_applied=cp.lag_applied + h,
    )


def subset_assets(rp: ReturnPanel, asset_ids: Iterable[str]) -> ReturnPanel:
    ids = [a for a in asset_ids]
    cols = [rp.asset_position(a) for a in ids]
    return ReturnPanel(tuple(ids), rp.dates, rp.returns[:, cols], rp.market_returns)
