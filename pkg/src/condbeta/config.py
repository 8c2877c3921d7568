"""Run configuration: one YAML file drives every command.

Unknown keys are rejected so that a typo cannot silently fall back to a
default. Paths are resolved relative to the config file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .learners import FAMILIES, HyperGrid, LearnerError
from .pipeline import COMBINATIONS, RECONSTRUCTIONS
from .realized_beta import HORIZONS, BetaKind
from .synth import DgpConfig


class ConfigError(ValueError):
    pass


DATA_FILES = {
    "returns": "returns.csv",
    "market": "market.csv",
    "characteristics": "characteristics.csv",
    "groups": "groups.csv",
    "meta": "meta.csv",
    "dividends": "dividends.csv",
}


@dataclass(frozen=True)
class DataPaths:
    returns: Path
    market: Path
    characteristics: Path
    groups: Path
    meta: Path | None = None
    dividends: Path | None = None


@dataclass(frozen=True)
class UniverseOptions:
    enabled: bool = False
    min_price: float = 5.0
    require_positive_volume: bool = True
    market_cap_percentile: float = 0.2


@dataclass(frozen=True)
class ForecastOptions:
    models: tuple = ("elastic_net", "rforest")
    kinds: tuple = ("Capm", "Down", "Up", "SemiN", "SemiP", "SemiMNeg", "SemiMPos")
    horizons: tuple = (1,)
    first_month: str | None = None
    last_month: str | None = None
    combinations: bool = True
    reconstructions: bool = True
    importance: bool = True
    grid: HyperGrid = field(default_factory=HyperGrid)


@dataclass(frozen=True)
class ValuationOptions:
    growth: tuple = (0.0, 0.01, 0.02)
    premium: tuple = (0.08, 0.10, 0.12)
    kinds: tuple = ("Capm_DU", "Capm_Semi")
    cash_flow_window: int = 12


@dataclass(frozen=True)
class PortfolioOptions:
    kinds: tuple = ("Capm", "Capm_DU", "Capm_Semi")
    models: tuple | None = None
    top_n: int = 500
    window_months: int = 24
    min_obs: int = 60


@dataclass(frozen=True)
class RunConfig:
    output_dir: Path
    seed: int = 0
    threads: int = 1
    data: DataPaths | None = None
    synth: DgpConfig | None = None
    beta_horizons: tuple = HORIZONS
    forecast: ForecastOptions = field(default_factory=ForecastOptions)
    universe: UniverseOptions = field(default_factory=UniverseOptions)
    valuation: ValuationOptions = field(default_factory=ValuationOptions)
    portfolio: PortfolioOptions = field(default_factory=PortfolioOptions)

    @property
    def data_dir(self) -> Path:
        return self.output_dir / "data"

    def data_paths(self) -> DataPaths:
        """Explicit data paths, or the files ``synth`` writes."""
        if self.data is not None:
            return self.data
        d = self.data_dir
        return DataPaths(**{k: d / v for k, v in DATA_FILES.items()})


def _build(cls, raw, where: str, **extra):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kw = {}
    for k, v in raw.items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    kw.update(extra)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_forecast(fo: ForecastOptions) -> None:
    if not fo.models or not fo.kinds or not fo.horizons:
        raise ConfigError("forecast: need at least one model, kind and horizon")
    bad = [m for m in fo.models if m not in FAMILIES]
    if bad:
        raise ConfigError(f"forecast.models: unknown family {bad}; choose from {list(FAMILIES)}")
    for k in fo.kinds:
        try:
            BetaKind(k)
        except ValueError:
            raise ConfigError(f"forecast.kinds: unknown kind {k!r}") from None
    bad = [h for h in fo.horizons if h not in HORIZONS]
    if bad:
        raise ConfigError(f"forecast.horizons: {bad} not in {list(HORIZONS)}")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    base = path.resolve().parent
    known = {"output_dir", "seed", "threads", "data", "synth", "betas", "forecast", "universe",
             "valuation", "portfolio"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    if "output_dir" not in raw:
        raise ConfigError("output_dir is required")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    seed = int(raw.get("seed", 0))
    data = None
    if raw.get("data") is not None:
        d = raw["data"]
        need = ("returns", "market", "characteristics", "groups")
        missing = [k for k in need if k not in d]
        if missing:
            raise ConfigError(f"data: missing path(s) {missing}")
        unknown = sorted(set(d) - set(DATA_FILES))
        if unknown:
            raise ConfigError(f"data: unknown key(s) {unknown}")
        data = DataPaths(**{k: resolve(v) for k, v in d.items()})
        for k in need:
            if not getattr(data, k).exists():
                raise FileNotFoundError(str(getattr(data, k)))

    synth = None
    if raw.get("synth") is not None:
        s = dict(raw["synth"])
        s.setdefault("seed", seed)
        synth = _build(DgpConfig, s, "synth")
    if data is None and synth is None:
        raise ConfigError("give either data paths or a synth section")

    fraw = dict(raw.get("forecast") or {})
    try:
        grid = HyperGrid.from_mapping(fraw.pop("grid", None) or {})
    except LearnerError as exc:
        raise ConfigError(f"forecast.grid: {exc}") from exc
    fo = _build(ForecastOptions, fraw, "forecast", grid=grid)
    _check_forecast(fo)

    braw = raw.get("betas") or {}
    unknown = sorted(set(braw) - {"horizons"})
    if unknown:
        raise ConfigError(f"betas: unknown key(s) {unknown}")
    beta_h = tuple(braw.get("horizons", HORIZONS))
    missing_h = [h for h in fo.horizons if h not in beta_h]
    if missing_h:
        raise ConfigError(f"forecast horizons {missing_h} are not computed by betas.horizons {list(beta_h)}")

    va = _build(ValuationOptions, raw.get("valuation"), "valuation")
    allowed = set(RECONSTRUCTIONS) | {k.value for k in BetaKind}
    bad = [k for k in va.kinds if k not in allowed]
    if bad:
        raise ConfigError(f"valuation.kinds: unknown {bad}")
    po = _build(PortfolioOptions, raw.get("portfolio"), "portfolio")
    if po.models is not None:
        bad = [m for m in po.models if m not in FAMILIES and m not in COMBINATIONS]
        if bad:
            raise ConfigError(f"portfolio.models: unknown {bad}")

    threads = int(raw.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return RunConfig(
        output_dir=resolve(raw["output_dir"]),
        seed=seed,
        threads=threads,
        data=data,
        synth=synth,
        beta_horizons=beta_h,
        forecast=fo,
        universe=_build(UniverseOptions, raw.get("universe"), "universe"),
        valuation=va,
        portfolio=po,
    )
