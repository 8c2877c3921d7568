"""Rolling-window forecasting protocol.

Each iteration holds a 120-month in-sample block (108 training months
followed by 12 validation months), an h-month gap, and 12 out-of-sample
months. Months in the schedule are *target* months: a row pairs the
predictors observed at month t with the realized beta of month t + h.
Because out-of-sample targets start h + 1 months after the in-sample block
ends, every forecast is formed from predictors dated after the last
target the model was trained on.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .learners import (
    LINEAR_FAMILIES,
    NONLINEAR_FAMILIES,
    FittedModel,
    HyperGrid,
    LearnerError,
    TrainingSet,
    combine_forecasts,
    derive_seed,
    fit_family,
    predict,
)
from .panel_store import CharacteristicPanel, ReturnPanel, lag_predictors, month_str, to_month
from .realized_beta import BetaKind, RealizedBetaPanel, down_up_weights

logger = logging.getLogger(__name__)

INSAMPLE_MONTHS = 120
VALIDATION_MONTHS = 12
OOS_MONTHS = 12
STEP_MONTHS = 12
AVAILABILITY_MONTHS = 36

COMBINATIONS = {"clin": LINEAR_FAMILIES, "cnl": NONLINEAR_FAMILIES}
# reconstructed CAPM beta targets and the component kinds they need
RECONSTRUCTIONS = {
    "Capm_DU": (BetaKind.Down, BetaKind.Up),
    "Capm_Semi": (BetaKind.SemiN, BetaKind.SemiP, BetaKind.SemiMNeg, BetaKind.SemiMPos),
}


class PipelineError(RuntimeError):
    pass


def _add(m, k: int):
    return to_month(m) + np.timedelta64(int(k), "M")


@dataclass(frozen=True)
class Iteration:
    index: int
    train: tuple  # (first, last) inclusive target months
    validation: tuple
    insample: tuple
    oos: tuple
    h: int

    def describe(self) -> dict:
        return {
            "index": self.index,
            "h": self.h,
            **{k: [month_str(a), month_str(b)] for k, (a, b) in
               (("train", self.train), ("validation", self.validation),
                ("insample", self.insample), ("oos", self.oos))},
        }


@dataclass(frozen=True)
class WindowSchedule:
    iterations: tuple
    step: int = STEP_MONTHS


def build_schedule(first_month, last_month, h: int) -> WindowSchedule:
    """Rolling 120-month windows advanced by 12 months.

    The out-of-sample block of each iteration starts after an h-month gap
    following the in-sample block and is cut at ``last_month``.
    """
    first, last = to_month(first_month), to_month(last_month)
    span = int((last - first).astype(int)) + 1
    need = INSAMPLE_MONTHS + h + 1
    if span < need:
        raise PipelineError(f"span of {span} months is too short; need at least {need} for h={h}")
    its = []
    k = 0
    while True:
        in_start = _add(first, STEP_MONTHS * k)
        in_end = _add(in_start, INSAMPLE_MONTHS - 1)
        oos_start = _add(in_end, h + 1)
        if oos_start > last:
            break
        oos_end = min(_add(oos_start, OOS_MONTHS - 1), last)
        its.append(Iteration(
            k,
            (in_start, _add(in_end, -VALIDATION_MONTHS)),
            (_add(in_end, -VALIDATION_MONTHS + 1), in_end),
            (in_start, in_end),
            (oos_start, oos_end),
            h,
        ))
        k += 1
    return WindowSchedule(tuple(its))


# --------------------------------------------------------------------------
# forecast panel


_FP_COLUMNS = ("asset", "target_month", "model", "kind", "horizon", "forecast", "realization", "benchmark")


@dataclass(frozen=True)
class ForecastPanel:
    """Aligned (forecast, realization, benchmark) rows.

    Columns are parallel numpy arrays. ``kind`` is a string so that
    reconstructed CAPM targets (``Capm_DU``, ``Capm_Semi``) share the table
    with the directly forecast beta kinds.
    """

    asset: np.ndarray
    target_month: np.ndarray
    model: np.ndarray
    kind: np.ndarray
    horizon: np.ndarray
    forecast: np.ndarray
    realization: np.ndarray
    benchmark: np.ndarray

    def __post_init__(self):
        n = len(self.asset)
        cast = {
            "asset": lambda a: np.asarray(a, dtype=object),
            "target_month": lambda a: np.asarray(a, dtype="datetime64[M]"),
            "model": lambda a: np.asarray(a, dtype=object),
            "kind": lambda a: np.asarray([str(k) for k in a], dtype=object),
            "horizon": lambda a: np.asarray(a, dtype=int),
            "forecast": lambda a: np.asarray(a, dtype=float),
            "realization": lambda a: np.asarray(a, dtype=float),
            "benchmark": lambda a: np.asarray(a, dtype=float),
        }
        for name, fn in cast.items():
            arr = fn(getattr(self, name))
            if arr.shape != (n,):
                raise PipelineError(f"column {name} has length {arr.shape}, expected {n}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if n and not (np.all(np.isfinite(self.forecast)) and np.all(np.isfinite(self.realization))
                      and np.all(np.isfinite(self.benchmark))):
            raise PipelineError("forecast panel rows must have finite forecast, realization and benchmark")

    def __len__(self):
        return len(self.asset)

    @classmethod
    def empty(cls) -> "ForecastPanel":
        return cls(*([[]] * 8))

    @classmethod
    def concat(cls, panels) -> "ForecastPanel":
        panels = [p for p in panels if len(p)]
        if not panels:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, c) for p in panels]) for c in _FP_COLUMNS))

    def take(self, idx) -> "ForecastPanel":
        return ForecastPanel(*(getattr(self, c)[idx] for c in _FP_COLUMNS))

    def select(self, model=None, kind=None, horizon=None) -> "ForecastPanel":
        mask = np.ones(len(self), dtype=bool)
        if model is not None:
            mask &= self.model == model
        if kind is not None:
            mask &= self.kind == str(kind)
        if horizon is not None:
            mask &= self.horizon == int(horizon)
        return self.take(np.flatnonzero(mask))

    def cells(self) -> list[tuple]:
        """Distinct (model, kind, horizon) triples in deterministic order."""
        return sorted({(m, k, int(h)) for m, k, h in zip(self.model, self.kind, self.horizon)})

    def sorted(self) -> "ForecastPanel":
        keys = [(m, k, int(h), str(t), a) for m, k, h, t, a in
                zip(self.model, self.kind, self.horizon, self.target_month, self.asset)]
        order = sorted(range(len(keys)), key=keys.__getitem__)
        return self.take(np.array(order, dtype=int))

    def write(self, path) -> None:
        fp = self.sorted()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_FP_COLUMNS)
            for row in zip(fp.asset, fp.target_month, fp.model, fp.kind, fp.horizon,
                           fp.forecast, fp.realization, fp.benchmark):
                a, t, m, k, h, f, r, b = row
                w.writerow([a, month_str(t), m, k, int(h), repr(float(f)), repr(float(r)), repr(float(b))])

    @classmethod
    def read(cls, path) -> "ForecastPanel":
        cols = {c: [] for c in _FP_COLUMNS}
        with open(path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            header = next(r)
            if tuple(header) != _FP_COLUMNS:
                raise PipelineError(f"{path}: unexpected header {header}")
            for row in r:
                for c, v in zip(_FP_COLUMNS, row):
                    cols[c].append(v)
        cols["target_month"] = [to_month(v) for v in cols["target_month"]]
        return cls(*(cols[c] for c in _FP_COLUMNS))


# --------------------------------------------------------------------------
# row selection


@dataclass
class RowBlock:
    """Design rows for one (iteration, kind) slice of a block of target months."""

    X: np.ndarray
    y: np.ndarray
    asset_idx: np.ndarray
    target_month: np.ndarray
    feature_month: np.ndarray
    benchmark: np.ndarray

    @property
    def n(self):
        return self.y.size

    def training_set(self) -> TrainingSet:
        keys = tuple(zip(self.asset_idx.tolist(), (str(m) for m in self.target_month)))
        return TrainingSet(self.X, self.y, keys)

    def subset(self, mask) -> "RowBlock":
        return RowBlock(*(getattr(self, f)[mask] for f in
                          ("X", "y", "asset_idx", "target_month", "feature_month", "benchmark")))


@dataclass(frozen=True)
class PanelData:
    """Everything a forecasting cell needs, aligned on asset ids.

    ``lagged[h]`` is the preprocessed characteristic panel shifted by h
    months; ``target[(kind, h)]`` is a (n_months x n_assets) array on
    ``months`` (kind may be a reconstruction name); ``availability`` the
    monthly return-availability mask on the same grid.
    """

    months: np.ndarray
    asset_ids: tuple
    lagged: dict
    target: dict
    availability: np.ndarray
    audit: list = field(default_factory=list, compare=False)


def prepare_panel_data(
    rp: ReturnPanel,
    chars: CharacteristicPanel,
    betas: RealizedBetaPanel,
    horizons,
) -> PanelData:
    """Align characteristics, realized betas and availability on one grid.

    ``chars`` must be preprocessed and unlagged; lagging by each horizon
    happens here so that feature month + h = target month by construction.
    """
    if chars.lag_applied != 0:
        raise PipelineError("pass the unlagged characteristic panel; lagging is per horizon")
    asset_ids = tuple(a for a in betas.asset_ids)
    months = betas.months
    av_months, av = rp.monthly_availability()
    avail = _reindex(av_months, rp.asset_ids, av.astype(float), months, asset_ids, fill=0.0) > 0.5

    lagged = {}
    for h in horizons:
        lp = lag_predictors(chars, h)
        vals = np.full((months.size, len(asset_ids), len(chars.predictor_names)), np.nan)
        pm = {m: i for i, m in enumerate(lp.months)}
        pa = {a: j for j, a in enumerate(lp.asset_ids)}
        cols = [pa.get(a, -1) for a in asset_ids]
        for i, m in enumerate(months):
            if m not in pm:
                continue
            src = pm[m]
            for j, c in enumerate(cols):
                if c >= 0 and lp.present[src, c]:
                    vals[i, j] = lp.values[src, c]
        lagged[h] = (vals, lp)

    target = {}
    for (kind, h), arr in betas.values.items():
        if h in horizons:
            target[(kind.value, h)] = arr
    # reconstructed CAPM realization is the realized CAPM beta itself
    for h in horizons:
        if (BetaKind.Capm.value, h) in target:
            for name in RECONSTRUCTIONS:
                target[(name, h)] = target[(BetaKind.Capm.value, h)]
        if (h, "down") in betas.market_sq:
            target[("_w_down", h)], target[("_w_up", h)] = down_up_weights(
                betas.market_sq[(h, "down")], betas.market_sq[(h, "up")]
            )
    return PanelData(months, asset_ids, lagged, target, avail)


def _reindex(src_months, src_ids, arr, months, ids, fill=np.nan):
    out = np.full((len(months), len(ids)), fill)
    pm = {m: i for i, m in enumerate(src_months)}
    pa = {a: j for j, a in enumerate(src_ids)}
    cols = np.array([pa.get(a, -1) for a in ids])
    for i, m in enumerate(months):
        if m in pm:
            ok = cols >= 0
            out[i, ok] = arr[pm[m], cols[ok]]
    return out


def eligible_assets(it: Iteration, data: PanelData) -> np.ndarray:
    """Assets with at least one daily return in each of the in-sample block's
    final 36 months."""
    last = it.insample[1]
    need = [_add(last, -k) for k in range(AVAILABILITY_MONTHS)]
    pm = {m: i for i, m in enumerate(data.months)}
    ok = np.ones(len(data.asset_ids), dtype=bool)
    for m in need:
        if m not in pm:
            return np.zeros(len(data.asset_ids), dtype=bool)
        ok &= data.availability[pm[m]]
    return ok


def select_rows(it: Iteration, data: PanelData, kind: str, span: tuple, *, need_benchmark: bool,
                eligible: np.ndarray | None = None) -> RowBlock:
    """Rows whose target month lies in ``span`` (inclusive).

    Drops rows with missing target, predictors, or (if requested) benchmark;
    only assets eligible for the iteration are kept.
    """
    h = it.h
    if (kind, h) not in data.target:
        raise PipelineError(f"no realized beta for kind {kind} at horizon {h}")
    if eligible is None:
        eligible = eligible_assets(it, data)
    vals, _ = data.lagged[h]
    tgt = data.target[(kind, h)]
    pm = {m: i for i, m in enumerate(data.months)}
    Xs, ys, ai, tm, fm, bm = [], [], [], [], [], []
    m = span[0]
    while m <= span[1]:
        i = pm.get(m)
        if i is not None:
            fmonth = _add(m, -h)
            src = pm.get(fmonth)
            y = tgt[i]
            bench = tgt[src] if src is not None else np.full(y.shape, np.nan)
            ok = eligible & np.isfinite(y) & np.all(np.isfinite(vals[i]), axis=1)
            if need_benchmark:
                ok &= np.isfinite(bench)
            idx = np.flatnonzero(ok)
            if idx.size:
                Xs.append(vals[i, idx])
                ys.append(y[idx])
                ai.append(idx)
                tm.append(np.full(idx.size, m))
                fm.append(np.full(idx.size, fmonth))
                bm.append(bench[idx])
        m = _add(m, 1)
    p = vals.shape[2]
    if not ys:
        return RowBlock(np.zeros((0, p)), np.zeros(0), np.zeros(0, int), np.zeros(0, "datetime64[M]"),
                        np.zeros(0, "datetime64[M]"), np.zeros(0))
    block = RowBlock(np.vstack(Xs), np.concatenate(ys), np.concatenate(ai), np.concatenate(tm),
                     np.concatenate(fm), np.concatenate(bm))
    data.audit.append({
        "iteration": it.index, "kind": kind, "h": h, "span": [month_str(span[0]), month_str(span[1])],
        "rows": int(block.n),
        "violations": int(np.sum(block.feature_month + np.timedelta64(h, "M") != block.target_month)),
        "lookahead": int(np.sum(block.feature_month <= it.insample[1])) if span[0] > it.insample[1] else 0,
    })
    return block


def select_training_rows(it: Iteration, data: PanelData, kind: str) -> TrainingSet:
    block = select_rows(it, data, kind, it.train, need_benchmark=False)
    if block.n == 0:
        raise PipelineError(f"empty training set in iteration {it.index} ({kind}, h={it.h})")
    return block.training_set()


# --------------------------------------------------------------------------
# tuning


@dataclass
class CellResult:
    model: str
    kind: str
    h: int
    iteration: int
    oos: RowBlock
    forecast: np.ndarray
    hyper: dict
    validation_mse: list
    fitted: FittedModel | None = None
    error: str | None = None


def _refit_hyper(family, hyper, tuned: FittedModel):
    if family == "gboost":
        # keep the tuned number of boosting stages; no early stopping on refit
        return {**hyper, "max_trees": max(tuned.info["n_trees"], 1), "patience": 10**9}
    return hyper


def tune_fit_forecast(it: Iteration, family: str, grid: HyperGrid, data: PanelData, kind: str,
                      seed: int, keep_model: bool = False) -> CellResult:
    """Grid search on the validation block, refit on the full in-sample block,
    forecast the out-of-sample rows."""
    eligible = eligible_assets(it, data)
    train = select_rows(it, data, kind, it.train, need_benchmark=False, eligible=eligible)
    val = select_rows(it, data, kind, it.validation, need_benchmark=False, eligible=eligible)
    oos = select_rows(it, data, kind, it.oos, need_benchmark=True, eligible=eligible)
    if train.n == 0 or val.n == 0:
        raise PipelineError(f"iteration {it.index}: empty training or validation rows for {kind}, h={it.h}")
    ts_train, ts_val = train.training_set(), val.training_set()
    scores = []
    best = None
    for cand in grid.candidates(family, ts_train.p):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = fit_family(family, ts_train, ts_val, cand, seed)
        except (LearnerError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("candidate %s failed: %s", cand, exc)
            scores.append(None)
            continue
        mse = float(np.mean((ts_val.y - predict(model, ts_val.X)) ** 2))
        scores.append(mse)
        if best is None or mse < best[0]:
            best = (mse, cand, model)
    if best is None:
        raise PipelineError(f"iteration {it.index}: every {family} candidate failed to fit")
    _, cand, tuned = best
    insample = select_rows(it, data, kind, it.insample, need_benchmark=False, eligible=eligible)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        final = fit_family(family, insample.training_set(), ts_val, _refit_hyper(family, cand, tuned), seed)
    fc = predict(final, oos.X) if oos.n else np.zeros(0)
    return CellResult(family, kind, it.h, it.index, oos, fc, dict(final.hyper), scores,
                      final if keep_model else None)


def benchmark_forecast(betas: RealizedBetaPanel, kind, h: int) -> tuple[np.ndarray, np.ndarray]:
    """(months, n_months x n_assets) benchmark: value at target month t + h is
    the realized beta of the window ending at month t."""
    src = betas.get(kind, h)
    out = np.full(src.shape, np.nan)
    pm = {m: i for i, m in enumerate(betas.months)}
    for i, m in enumerate(betas.months):
        j = pm.get(_add(m, -h))
        if j is not None:
            out[i] = src[j]
    return betas.months, out


# --------------------------------------------------------------------------
# experiment


@dataclass
class ExperimentResult:
    panel: ForecastPanel
    hyper: list
    errors: list
    audit: list
    importance: list


def _cell_rows(res: CellResult, data: PanelData) -> ForecastPanel:
    o = res.oos
    n = o.n
    return ForecastPanel(
        [data.asset_ids[j] for j in o.asset_idx], o.target_month, [res.model] * n, [res.kind] * n,
        [res.h] * n, res.forecast, o.y, o.benchmark,
    )


def _keyed(fp: ForecastPanel) -> dict:
    return {(a, str(t)): i for i, (a, t) in enumerate(zip(fp.asset, fp.target_month))}


def _combine_rows(panel: ForecastPanel, name: str, members, kind: str, h: int) -> ForecastPanel:
    parts = [panel.select(model=m, kind=kind, horizon=h) for m in members]
    if any(len(p) == 0 for p in parts):
        return ForecastPanel.empty()
    base = parts[0]
    keys = _keyed(base)
    stack = []
    for p in parts:
        col = np.full(len(base), np.nan)
        for i, key in enumerate(zip(p.asset, (str(t) for t in p.target_month))):
            j = keys.get(key)
            if j is not None:
                col[j] = p.forecast[i]
        stack.append(col)
    fc = combine_forecasts(stack)
    return ForecastPanel(base.asset, base.target_month, [name] * len(base), base.kind, base.horizon,
                         fc, base.realization, base.benchmark)


def _reconstruct_rows(panel: ForecastPanel, data: PanelData, name: str, model: str, h: int) -> ForecastPanel:
    comps = RECONSTRUCTIONS[name]
    parts = [panel.select(model=model, kind=k.value, horizon=h) for k in comps]
    if any(len(p) == 0 for p in parts) or (BetaKind.Capm.value, h) not in data.target:
        return ForecastPanel.empty()
    maps = [dict(zip(zip(p.asset, (str(t) for t in p.target_month)), p.forecast)) for p in parts]
    common = sorted(set(maps[0]).intersection(*maps[1:]))
    pm = {m: i for i, m in enumerate(data.months)}
    pa = {a: j for j, a in enumerate(data.asset_ids)}
    capm = data.target[(BetaKind.Capm.value, h)]
    rows = []
    for a, t in common:
        tm = to_month(t)
        i, j, src = pm[tm], pa[a], pm.get(_add(tm, -h))
        if src is None:
            continue
        real, bench = capm[i, j], capm[src, j]
        if not (np.isfinite(real) and np.isfinite(bench)):
            continue
        f = [mp[(a, t)] for mp in maps]
        if name == "Capm_DU":
            # variance shares known at the forecast origin (window ending at the feature month)
            wd, wu = data.target[("_w_down", h)][src, j], data.target[("_w_up", h)][src, j]
            if not (np.isfinite(wd) and np.isfinite(wu)):
                continue
            fc = f[0] * wd + f[1] * wu
        else:
            fc = f[0] + f[1] - f[2] - f[3]
        rows.append((a, tm, fc, real, bench))
    if not rows:
        return ForecastPanel.empty()
    a, tm, fc, real, bench = zip(*rows)
    n = len(rows)
    return ForecastPanel(a, tm, [model] * n, [name] * n, [h] * n, fc, real, bench)


def run_cells(data: PanelData, schedule_by_h: dict, models, kinds, grid: HyperGrid, run_seed: int,
              *, threads: int = 1, fail_fast: bool = False, importance_groups: dict | None = None):
    """Execute every (iteration, model, kind, horizon) cell; merge in a fixed order."""
    jobs = []
    for h in sorted(schedule_by_h):
        for it in schedule_by_h[h].iterations:
            for model in models:
                for kind in kinds:
                    jobs.append((it, model, str(BetaKind(kind).value)))

    def work(job):
        it, model, kind = job
        seed = derive_seed(run_seed, model, kind, it.h, it.index)
        try:
            return tune_fit_forecast(it, model, grid, data, kind, seed, keep_model=importance_groups is not None)
        except (PipelineError, LearnerError) as exc:
            if fail_fast:
                raise
            return CellResult(model, kind, it.h, it.index, None, None, {}, [], error=str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    return results


def run_experiment(
    data: PanelData,
    *,
    models,
    kinds,
    horizons,
    grid: HyperGrid | None = None,
    seed: int = 0,
    first_month=None,
    last_month=None,
    combinations: bool = True,
    reconstructions: bool = True,
    threads: int = 1,
    fail_fast: bool = False,
    importance_groups: dict | None = None,
) -> ExperimentResult:
    """Full cross-product of models x kinds x horizons over the rolling schedule."""
    from .evaluation import permutation_group_importance

    grid = grid or HyperGrid()
    first = to_month(first_month) if first_month is not None else data.months[0]
    last = to_month(last_month) if last_month is not None else data.months[-1]
    schedules = {h: build_schedule(first, last, h) for h in horizons}
    results = run_cells(data, schedules, models, kinds, grid, seed, threads=threads,
                        fail_fast=fail_fast, importance_groups=importance_groups)

    parts, hyper, errors, importance = [], [], [], []
    for res in results:
        if res.error is not None:
            errors.append({"model": res.model, "kind": res.kind, "h": res.h,
                           "iteration": res.iteration, "error": res.error})
            continue
        parts.append(_cell_rows(res, data))
        hyper.append({"model": res.model, "kind": res.kind, "h": res.h, "iteration": res.iteration,
                      "hyper": res.hyper, "validation_mse": res.validation_mse})
        if importance_groups is not None and res.fitted is not None and res.oos.n:
            imp = permutation_group_importance(
                res.fitted, res.oos.X, res.oos.y, res.oos.target_month, importance_groups,
                seed=derive_seed(seed, "importance", res.model, res.kind, res.h, res.iteration),
            )
            importance.append({"model": res.model, "kind": res.kind, "h": res.h,
                               "iteration": res.iteration, "importance": imp})
    panel = ForecastPanel.concat(parts)

    extra = []
    kind_names = [BetaKind(k).value for k in kinds]
    if reconstructions:
        for name, comps in RECONSTRUCTIONS.items():
            if all(c.value in kind_names for c in comps):
                for h in horizons:
                    for m in models:
                        extra.append(_reconstruct_rows(panel, data, name, m, h))
    panel = ForecastPanel.concat([panel, *extra])
    if combinations:
        combo = []
        kinds_all = sorted(set(panel.kind))
        for name, members in COMBINATIONS.items():
            if all(m in models for m in members):
                for k in kinds_all:
                    for h in horizons:
                        combo.append(_combine_rows(panel, name, members, k, h))
        panel = ForecastPanel.concat([panel, *combo])
    return ExperimentResult(panel.sorted(), hyper, errors, list(data.audit), importance)


def write_experiment(res: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.panel.write(out / "forecasts.csv")
    (out / "hyperparameters.json").write_text(json.dumps(res.hyper, indent=1, sort_keys=True, default=str) + "\n")
    (out / "errors.json").write_text(json.dumps(res.errors, indent=1, sort_keys=True) + "\n")
    audit = sorted(res.audit, key=lambda r: (r["h"], r["iteration"], r["kind"], r["span"]))
    (out / "audit.json").write_text(json.dumps(audit, indent=1, sort_keys=True) + "\n")
    if res.importance:
        (out / "importance.json").write_text(json.dumps(res.importance, indent=1, sort_keys=True) + "\n")
