"""Shared learner types: training sets, hyperparameter grids, fitted models."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

FORMAT_VERSION = 1

LINEAR_FAMILIES = ("pcr", "pls", "elastic_net")
NONLINEAR_FAMILIES = ("gboost", "rforest", "ffnn")
FAMILIES = LINEAR_FAMILIES + NONLINEAR_FAMILIES + ("tree",)


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    row_keys: tuple = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise LearnerError(f"X {X.shape} and y {y.shape} are not aligned")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise LearnerError("training set needs n >= 1 and P >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise LearnerError("training set contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _log_grid(lo, hi, num):
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), num))


@dataclass(frozen=True)
class HyperGrid:
    """Candidate hyperparameters per learner family.

    ``candidates(family, p)`` enumerates dicts in a fixed order; tuning
    ties resolve to the earliest candidate.
    """

    pcr_k: tuple = tuple(range(1, 11))
    pls_k: tuple = tuple(range(1, 11))
    enet_lambda: tuple = _log_grid(1e-3, 1e3, 20)
    enet_alpha: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    gb_max_trees: int = 500
    gb_depth: tuple = (1, 2)
    gb_learning_rate: tuple = (0.1, 0.01)
    gb_patience: int = 50
    rf_trees: int = 200
    rf_depth: tuple = (5, 10, 15, 20)
    rf_min_leaf: int = 5
    nn_learning_rate: tuple = (0.001, 0.01)
    nn_dropout: tuple = (0.1, 0.2, 0.3)
    nn_depth: tuple = (1, 2, 3)
    nn_max_epochs: int = 100
    nn_patience: int = 5
    nn_seeds: int = 10
    nn_batch_size: int = 256

    def __post_init__(self):
        checks = [
            all(1 <= k <= 10 for k in self.pcr_k + self.pls_k),
            all(1e-3 <= lam <= 1e3 for lam in self.enet_lambda),
            all(0.0 <= a <= 1.0 for a in self.enet_alpha),
            1 <= self.gb_max_trees <= 500,
            all(d in (1, 2) for d in self.gb_depth),
            all(v in (0.1, 0.01) for v in self.gb_learning_rate),
            self.rf_trees >= 1,
            all(d >= 1 for d in self.rf_depth),
            all(d in (1, 2, 3) for d in self.nn_depth),
            all(0.0 <= d < 1.0 for d in self.nn_dropout),
        ]
        if not all(checks):
            raise LearnerError("hyperparameter grid has a candidate outside its allowed range")

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> "HyperGrid":
        if not mapping:
            return cls()
        kw = {}
        for k, v in mapping.items():
            if k not in cls.__dataclass_fields__:
                raise LearnerError(f"unknown grid key {k!r}")
            if k == "enet_lambda" and isinstance(v, dict):
                v = _log_grid(v["lo"], v["hi"], int(v["num"]))
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    def candidates(self, family: str, p: int) -> list[dict]:
        if family == "pcr":
            return [{"K": k} for k in self.pcr_k]
        if family == "pls":
            return [{"K": k} for k in self.pls_k]
        if family == "elastic_net":
            return [{"lam": lam, "alpha": a} for lam, a in itertools.product(self.enet_lambda, self.enet_alpha)]
        if family == "gboost":
            return [
                {"max_trees": self.gb_max_trees, "depth": d, "learning_rate": v, "patience": self.gb_patience}
                for d, v in itertools.product(self.gb_depth, self.gb_learning_rate)
            ]
        if family == "rforest":
            return [
                {"n_trees": self.rf_trees, "depth": d, "mtry": math.ceil(math.sqrt(p)), "min_leaf": self.rf_min_leaf}
                for d in self.rf_depth
            ]
        if family == "ffnn":
            return [
                {
                    "lr": lr, "dropout": dr, "depth": d,
                    "max_epochs": self.nn_max_epochs, "patience": self.nn_patience,
                    "seed_count": self.nn_seeds, "batch_size": self.nn_batch_size,
                }
                for lr, dr, d in itertools.product(self.nn_learning_rate, self.nn_dropout, self.nn_depth)
            ]
        raise LearnerError(f"unknown family {family!r}")


@dataclass(frozen=True)
class FittedModel:
    """A trained predictor.

    ``params`` holds numpy arrays (read-only) and scalars; ``hyper`` the
    chosen hyperparameters. Prediction dispatches on ``family``.
    """

    family: str
    params: dict
    hyper: dict
    seed: int | None
    n_features: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in self.params.values():
            if isinstance(v, np.ndarray):
                v.setflags(write=False)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    # serialization -------------------------------------------------------

    def to_json(self) -> str:
        def enc(v):
            if isinstance(v, np.ndarray):
                return {"__ndarray__": v.tolist(), "dtype": str(v.dtype), "shape": list(v.shape)}
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            if isinstance(v, dict):
                return {k: enc(x) for k, x in v.items()}
            if isinstance(v, np.generic):
                return v.item()
            return v

        blob = {
            "format": "condbeta.FittedModel",
            "version": FORMAT_VERSION,
            "family": self.family,
            "params": enc(self.params),
            "hyper": enc(self.hyper),
            "seed": self.seed,
            "n_features": self.n_features,
            "info": enc(self.info),
        }
        return json.dumps(blob, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        blob = json.loads(text)
        if blob.get("format") != "condbeta.FittedModel":
            raise LearnerError("not a serialized FittedModel")
        if blob.get("version") != FORMAT_VERSION:
            raise LearnerError(f"unsupported model format version {blob.get('version')}")

        def dec(v):
            if isinstance(v, dict) and "__ndarray__" in v:
                return np.array(v["__ndarray__"], dtype=v["dtype"]).reshape(v["shape"])
            if isinstance(v, dict):
                return {k: dec(x) for k, x in v.items()}
            if isinstance(v, list):
                return [dec(x) for x in v]
            return v

        return cls(
            blob["family"], dec(blob["params"]), dec(blob["hyper"]),
            blob["seed"], blob["n_features"], dec(blob["info"]),
        )


_PREDICTORS: dict[str, Callable[[FittedModel, np.ndarray], np.ndarray]] = {}


def register_predictor(*families):
    def deco(fn):
        for f in families:
            _PREDICTORS[f] = fn
        return fn
    return deco


def predict(m: FittedModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise LearnerError(
            f"expected {m.n_features} predictor columns, got {X.shape[-1] if X.ndim else 0}"
        )
    return _PREDICTORS[m.family](m, X)


def combine_forecasts(forecasts: Sequence) -> np.ndarray:
    """Per-position mean of the available (finite) forecasts."""
    if not forecasts:
        raise LearnerError("need at least one forecast vector")
    stack = np.vstack([np.asarray(f, dtype=float) for f in forecasts])
    ok = np.isfinite(stack)
    cnt = ok.sum(axis=0)
    tot = np.where(ok, stack, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / cnt, np.nan)


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary hashable parts (no Python ``hash``)."""
    import hashlib

    h = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1
