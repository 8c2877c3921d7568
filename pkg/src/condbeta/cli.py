"""Command-line entry point.

    condbeta {synth,betas,forecast,evaluate,value,portfolio,report} --config run.yaml

Every command reads one YAML config, writes its artifacts under
``output_dir`` and prints a one-line JSON status record. Failures print a
JSON error record to stderr and exit nonzero; a missing upstream artifact
exits with code 2 and names the expected file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .evaluation import EvaluationError, cdfe, evaluate_cell, quintile_report
from .panel_store import (
    CharacteristicPanel,
    UniverseFilter,
    apply_universe_filters,
    load_characteristics,
    load_daily_returns,
    load_monthly_meta,
    month_str,
    preprocess_characteristics,
    to_month,
    write_characteristics,
    write_daily_returns,
    write_monthly_meta,
)
from .pipeline import ForecastPanel, prepare_panel_data, run_experiment, write_experiment
from .portfolio import form_and_track, write_track, write_weights
from .realized_beta import ALL_KINDS, compute_beta_panel, descriptive_stats, read_beta_panel, write_beta_panel
from .synth import generate
from .valuation import pricing_rows, rolling_cash_flow, valuation_table, write_valuation_table

log = logging.getLogger("condbeta")

COMMANDS = ("synth", "betas", "forecast", "evaluate", "value", "portfolio", "report")


class MissingArtifact(FileNotFoundError):
    """An upstream file a command depends on does not exist."""

    def __init__(self, path, producer: str | None = None):
        hint = f" (run `condbeta {producer}` first)" if producer else ""
        super().__init__(f"missing upstream artifact {path}{hint}")
        self.path = str(path)
        self.producer = producer


def _need(path, producer=None) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(path, producer)
    return path


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


# --------------------------------------------------------------------------
# small long-format helpers for monthly (month x asset) arrays


def write_monthly_long(path, months, asset_ids, arr, column: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "asset_id", column])
        for i, m in enumerate(months):
            for j, a in enumerate(asset_ids):
                if np.isfinite(arr[i, j]):
                    w.writerow([month_str(m), a, repr(float(arr[i, j]))])


def read_monthly_long(path, months, asset_ids) -> np.ndarray:
    pm = {m: i for i, m in enumerate(months)}
    pa = {a: j for j, a in enumerate(asset_ids)}
    out = np.full((len(months), len(asset_ids)), np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r, None)
        for row in r:
            if not row:
                continue
            i, j = pm.get(to_month(row[0])), pa.get(row[1].strip())
            if i is not None and j is not None:
                out[i, j] = float(row[2])
    return out


# --------------------------------------------------------------------------
# paths


def _paths(cfg: RunConfig) -> dict:
    out = cfg.output_dir
    return {
        "betas": out / "betas" / "betas.csv",
        "forecast_dir": out / "forecast",
        "forecasts": out / "forecast" / "forecasts.csv",
        "importance": out / "forecast" / "importance.json",
        "evaluation": out / "evaluation",
        "valuation": out / "valuation" / "valuation.csv",
        "portfolio": out / "portfolio",
        "report": out / "report" / "summary.md",
    }


def _load_returns(cfg: RunConfig):
    dp = cfg.data_paths()
    return load_daily_returns(_need(dp.returns, "synth"), _need(dp.market, "synth"))


def _load_meta(cfg: RunConfig, required: bool):
    dp = cfg.data_paths()
    if dp.meta is None or (not required and not Path(dp.meta).exists()):
        if required:
            raise ConfigError("this command needs data.meta (price, volume, market cap)")
        return None
    return load_monthly_meta(_need(dp.meta, "synth"))


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> list:
    if cfg.synth is None:
        raise ConfigError("synth command needs a synth section in the config")
    d = generate(cfg.synth)
    dp = cfg.data_paths()
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    write_daily_returns(d.returns, dp.returns, dp.market)
    write_characteristics(d.chars, dp.characteristics, dp.groups)
    write_monthly_meta(d.meta, dp.meta)
    write_monthly_long(dp.dividends, d.months, d.chars.asset_ids, d.cash_flow, "dividend")
    truth = cfg.data_dir / "true_beta.csv"
    write_monthly_long(truth, d.months, d.chars.asset_ids, d.true_beta, "beta")
    return [dp.returns, dp.market, dp.characteristics, dp.groups, dp.meta, dp.dividends, truth]


def cmd_betas(cfg: RunConfig, args) -> list:
    rp = _load_returns(cfg)
    panel = compute_beta_panel(rp, ALL_KINDS, cfg.beta_horizons)
    path = _paths(cfg)["betas"]
    path.parent.mkdir(parents=True, exist_ok=True)
    write_beta_panel(panel, path)
    outs = [path, path.with_suffix(".mktsq.csv")]
    stats_path = path.parent / "descriptive.csv"
    with open(stats_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fh.write("# time-series averages of monthly cross-sectional statistics; raw realized betas\n")
        w.writerow(["horizon", "kind", "mean", "median", "std"])
        corr_rows = []
        for h in cfg.beta_horizons:
            st = descriptive_stats(panel, h)
            for k in ALL_KINDS:
                if k.value in st["moments"]:
                    s = st["moments"][k.value]
                    w.writerow([h, k.value, _num(s["mean"]), _num(s["median"]), _num(s["std"])])
            for a, row in zip(st["kinds"], st["correlation"]):
                corr_rows.append([h, a, *(_num(v) for v in row)])
    corr_path = path.parent / "correlation.csv"
    _write_table(corr_path, "time-series average of monthly cross-sectional correlations between kinds",
                 ["horizon", "kind", *(k.value for k in ALL_KINDS)], corr_rows)
    outs += [stats_path, corr_path]
    return outs


def _universe_mask(cfg: RunConfig, cp: CharacteristicPanel) -> CharacteristicPanel:
    u = cfg.universe
    if not u.enabled:
        return cp
    meta = _load_meta(cfg, required=True)
    prices, volumes, caps = meta.aligned(cp.months, cp.asset_ids)
    ok = apply_universe_filters(
        cp.months, cp.asset_ids, prices, volumes, caps,
        UniverseFilter(u.min_price, u.require_positive_volume, u.market_cap_percentile),
    )
    present = cp.present & ok
    vals = np.array(cp.values)
    vals[~present] = np.nan
    return replace(cp, values=vals, present=present)


def cmd_forecast(cfg: RunConfig, args) -> list:
    p = _paths(cfg)
    dp = cfg.data_paths()
    rp = _load_returns(cfg)
    cp = load_characteristics(_need(dp.characteristics, "synth"), _need(dp.groups, "synth"))
    betas = read_beta_panel(_need(p["betas"], "betas"))
    cp = preprocess_characteristics(_universe_mask(cfg, cp))
    fo = cfg.forecast
    data = prepare_panel_data(rp, cp, betas, fo.horizons)
    res = run_experiment(
        data,
        models=fo.models,
        kinds=fo.kinds,
        horizons=fo.horizons,
        grid=fo.grid,
        seed=cfg.seed,
        first_month=fo.first_month,
        last_month=fo.last_month,
        combinations=fo.combinations,
        reconstructions=fo.reconstructions,
        threads=args.threads or cfg.threads,
        fail_fast=args.fail_fast,
        importance_groups=cp.group_columns() if fo.importance else None,
    )
    write_experiment(res, p["forecast_dir"])
    if res.errors:
        log.warning("%d cell(s) failed; see errors.json", len(res.errors))
    return sorted(p["forecast_dir"].iterdir())


def _evaluate_rows(fp: ForecastPanel, fail_fast: bool):
    rows, cd, qt, errors = [], [], [], []
    for model, kind, h in fp.cells():
        cell = fp.select(model, kind, h)
        try:
            ev = evaluate_cell(cell)
            months, cum = cdfe(cell)
            q = quintile_report(cell)
        except (EvaluationError, ValueError) as exc:
            if fail_fast:
                raise
            errors.append({"model": model, "kind": kind, "h": int(h), "error": str(exc)})
            continue
        for wname in ("Panel", "TimeSeries", "CrossSection"):
            e = ev[wname]
            rows.append([model, kind, h, wname, ev["n_rows"], _num(e["r2_pct"]), _num(e["mse_model"]),
                         _num(e["mse_benchmark"]), _num(e["cw_stat"]), _num(e["cw_se"]), e["stars"]])
        cd.extend([model, kind, h, month_str(m), repr(float(c))] for m, c in zip(months, cum))
        for k in range(5):
            qt.append([model, kind, h, k + 1, repr(float(q.realized[k])), repr(float(q.mse_benchmark[k])),
                       repr(float(q.mse_model[k])), repr(float(q.frac_positive_benchmark[k])),
                       repr(float(q.frac_positive_model[k]))])
    return rows, cd, qt, errors


def _write_table(path, comment: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fh.write(f"# {comment}\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_evaluate(cfg: RunConfig, args) -> list:
    p = _paths(cfg)
    fp = ForecastPanel.read(_need(p["forecasts"], "forecast"))
    rows, cd, qt, errors = _evaluate_rows(fp, args.fail_fast)
    out = p["evaluation"]
    out.mkdir(parents=True, exist_ok=True)
    _write_table(out / "r2_cw.csv",
                 "r2_pct: out-of-sample R^2 in percent vs the h-lagged realized beta; "
                 "cw_stat: Clark-West t-statistic, Newey-West lag 4 (0 for TS); stars 10/5/1%",
                 ["model", "kind", "horizon", "weighting", "n_rows", "r2_pct", "mse_model", "mse_benchmark",
                  "cw_stat", "cw_se", "stars"], rows)
    _write_table(out / "cdfe.csv", "cumulative (benchmark MSE - model MSE) over target months",
                 ["model", "kind", "horizon", "month", "cdfe"], cd)
    _write_table(out / "quintiles.csv",
                 "quintiles by realized beta (1 = lowest); time averages of monthly portfolio values",
                 ["model", "kind", "horizon", "quintile", "realized_beta", "mse_benchmark", "mse_model",
                  "frac_positive_benchmark", "frac_positive_model"], qt)
    outs = [out / "r2_cw.csv", out / "cdfe.csv", out / "quintiles.csv"]
    if p["importance"].exists():
        imp = json.loads(p["importance"].read_text(encoding="utf-8"))
        acc = {}
        for rec in imp:
            for g, v in rec["importance"].items():
                acc.setdefault((rec["model"], rec["kind"], rec["h"], g), []).append(v)
        irows = [[m, k, h, g, repr(float(np.mean(v)))] for (m, k, h, g), v in sorted(acc.items())]
        _write_table(out / "importance.csv",
                     "permutation importance per predictor group, percent of total (sums to 100), "
                     "averaged over iterations", ["model", "kind", "horizon", "group", "importance_pct"], irows)
        outs.append(out / "importance.csv")
    (out / "errors.json").write_text(json.dumps(errors, indent=1, sort_keys=True) + "\n")
    outs.append(out / "errors.json")
    return outs


def _monthly_inputs(cfg: RunConfig):
    dp = cfg.data_paths()
    meta = _load_meta(cfg, required=True)
    if dp.dividends is None:
        raise ConfigError("value command needs data.dividends")
    months, ids = meta.months, meta.asset_ids
    div = read_monthly_long(_need(dp.dividends, "synth"), months, ids)
    return months, ids, meta, div


def cmd_value(cfg: RunConfig, args) -> list:
    p = _paths(cfg)
    fp = ForecastPanel.read(_need(p["forecasts"], "forecast"))
    months, ids, meta, div = _monthly_inputs(cfg)
    cash_flow = rolling_cash_flow(np.where(np.isfinite(div), div, 0.0), cfg.valuation.cash_flow_window)
    va = cfg.valuation
    table = []
    for model in sorted(set(fp.model)):
        for kind in va.kinds:
            if not np.any((fp.model == model) & (fp.kind == kind)):
                continue
            rows = pricing_rows(fp, model, kind, cash_flow, meta.price, months, ids)
            table.extend(valuation_table(rows, model, va.growth, va.premium, kind=kind))
    out = p["valuation"]
    out.parent.mkdir(parents=True, exist_ok=True)
    write_valuation_table(table, out)
    return [out]


def cmd_portfolio(cfg: RunConfig, args) -> list:
    p = _paths(cfg)
    fp = ForecastPanel.read(_need(p["forecasts"], "forecast"))
    rp = _load_returns(cfg)
    meta = _load_meta(cfg, required=False)
    caps = None
    if meta is not None:
        caps = {}
        for i, m in enumerate(meta.months):
            row = meta.mktcap[i]
            caps[month_str(m)] = {a: float(row[j]) for j, a in enumerate(meta.asset_ids) if np.isfinite(row[j])}
    po = cfg.portfolio
    out = p["portfolio"]
    out.mkdir(parents=True, exist_ok=True)
    summary, outs = [], []
    for model, kind, h in fp.cells():
        if kind not in po.kinds or (po.models is not None and model not in po.models):
            continue
        cell = fp.select(model, kind, h)
        for use in ("forecast", "benchmark"):
            tr = form_and_track(cell, rp, caps, use=use, top_n=po.top_n,
                                window_months=po.window_months, min_obs=po.min_obs)
            stem = f"{model}_{kind}_h{h}_{use}"
            write_weights(tr, out / f"weights_{stem}.csv")
            write_track(tr, out / f"ex_post_{stem}.csv")
            outs += [out / f"weights_{stem}.csv", out / f"ex_post_{stem}.csv"]
            if tr.density is not None and tr.density.density is not None:
                _write_table(out / f"density_{stem}.csv", "Gaussian KDE of ex-post portfolio beta",
                             ["beta", "density"],
                             [[repr(float(g)), repr(float(v))] for g, v in zip(tr.density.grid, tr.density.density)])
                outs.append(out / f"density_{stem}.csv")
            eb = tr.ex_post_beta
            summary.append([model, kind, h, use, eb.size, len(tr.infeasible),
                            _num(eb.mean() if eb.size else np.nan),
                            _num(np.abs(eb).mean() if eb.size else np.nan),
                            _num(np.sqrt(np.mean(eb ** 2)) if eb.size else np.nan),
                            _num(tr.density.mode if tr.density is not None else np.nan)])
    _write_table(out / "summary.csv",
                 "minimum-variance market-neutral portfolios (|w| <= 0.3); ex-post beta over the holding window",
                 ["model", "kind", "horizon", "betas", "months", "infeasible", "mean_ex_post_beta",
                  "mean_abs_ex_post_beta", "rms_ex_post_beta", "density_mode"], summary)
    outs.append(out / "summary.csv")
    return outs


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    return rows[0], rows[1:]


def _md_table(header, rows) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines


def _fmt(s: str, digits: int = 2) -> str:
    try:
        return f"{float(s):.{digits}f}"
    except ValueError:
        return s


def cmd_report(cfg: RunConfig, args) -> list:
    p = _paths(cfg)
    header, rows = _read_table(_need(p["evaluation"] / "r2_cw.csv", "evaluate"))
    lines = ["# Conditional beta forecasting summary", "",
             "## Out-of-sample R^2 (percent, panel weighting) and Clark-West statistic", ""]
    ix = {c: i for i, c in enumerate(header)}
    panel = [r for r in rows if r[ix["weighting"]] == "Panel"]
    lines += _md_table(["model", "kind", "h", "n", "R2 %", "CW", ""],
                       [[r[ix["model"]], r[ix["kind"]], r[ix["horizon"]], r[ix["n_rows"]],
                         _fmt(r[ix["r2_pct"]]), _fmt(r[ix["cw_stat"]]), r[ix["stars"]]] for r in panel])
    if p["valuation"].exists():
        vh, vr = _read_table(p["valuation"])
        vi = {c: i for i, c in enumerate(vh)}
        lines += ["", "## Valuation R^2 (percent; growth and premium annual, monthly rate = annual/12)", ""]
        lines += _md_table(["growth", "premium", "horizon", "model", "kind", "R2 %", "n"],
                           [[r[vi["growth"]], r[vi["premium"]], r[vi["horizon"]], r[vi["model"]], r[vi["kind"]],
                             _fmt(r[vi["r2_pct"]]), r[vi["n"]]] for r in vr])
    else:
        lines += ["", "Valuation not run."]
    summ = p["portfolio"] / "summary.csv"
    if summ.exists():
        sh, sr = _read_table(summ)
        si = {c: i for i, c in enumerate(sh)}
        lines += ["", "## Market-neutral portfolios: ex-post beta", ""]
        lines += _md_table(["model", "kind", "h", "betas", "months", "mean", "mean |.|", "mode"],
                           [[r[si["model"]], r[si["kind"]], r[si["horizon"]], r[si["betas"]], r[si["months"]],
                             _fmt(r[si["mean_ex_post_beta"]], 4), _fmt(r[si["mean_abs_ex_post_beta"]], 4),
                             _fmt(r[si["density_mode"]], 4)] for r in sr])
    else:
        lines += ["", "Portfolio step not run."]
    out = p["report"]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [out]


HANDLERS = {
    "synth": cmd_synth,
    "betas": cmd_betas,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "value": cmd_value,
    "portfolio": cmd_portfolio,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="condbeta", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--threads", type=int, default=None, help="cap on worker threads (overrides config)")
    ap.add_argument("--fail-fast", action="store_true", help="abort on the first failing cell")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print(json.dumps({"status": "error", "command": args.command, "error": "ConfigError",
                          "message": "--threads must be >= 1"}), file=sys.stderr)
        return 1
    try:
        cfg = load_config(args.config)
        outs = HANDLERS[args.command](cfg, args)
    except MissingArtifact as exc:
        rec = {"status": "error", "command": args.command, "error": "MissingArtifact",
               "path": exc.path, "message": str(exc)}
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        rec = {"status": "error", "command": args.command, "error": "FileNotFoundError",
               "path": exc.filename or str(exc), "message": str(exc)}
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        rec = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, "outputs": [str(o) for o in outs]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
