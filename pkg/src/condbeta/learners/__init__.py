"""Supervised learners mapping standardized predictors to realized betas."""

from .base import (
    FAMILIES,
    LINEAR_FAMILIES,
    NONLINEAR_FAMILIES,
    FittedModel,
    HyperGrid,
    LearnerError,
    TrainingSet,
    combine_forecasts,
    derive_seed,
    predict,
)
from .linear import fit_elastic_net, fit_ols, fit_pcr, fit_pls
from .nn import fit_ffnn
from .trees import fit_gboost, fit_rforest, fit_tree


def fit_family(family: str, ts: TrainingSet, validation: TrainingSet | None, hyper: dict, seed: int) -> FittedModel:
    """Fit one grid candidate of ``family``.

    ``validation`` feeds early stopping for boosting and the network; other
    families ignore it.
    """
    if family == "pcr":
        return fit_pcr(ts, hyper["K"])
    if family == "pls":
        return fit_pls(ts, hyper["K"])
    if family == "elastic_net":
        return fit_elastic_net(ts, hyper["lam"], hyper["alpha"])
    if family == "gboost":
        return fit_gboost(ts, validation, **hyper)
    if family == "rforest":
        return fit_rforest(ts, seed=seed, **hyper)
    if family == "ffnn":
        return fit_ffnn(ts, validation, seed=seed, **hyper)
    if family == "tree":
        return fit_tree(ts, hyper["depth"], hyper.get("min_leaf", 5))
    raise LearnerError(f"unknown family {family!r}")


__all__ = [
    "FAMILIES", "LINEAR_FAMILIES", "NONLINEAR_FAMILIES", "FittedModel", "HyperGrid",
    "LearnerError", "TrainingSet", "combine_forecasts", "derive_seed", "predict",
    "fit_elastic_net", "fit_ols", "fit_pcr", "fit_pls", "fit_ffnn", "fit_gboost",
    "fit_rforest", "fit_tree", "fit_family",
]
