"""Principal component regression, SIMPLS partial least squares and the
elastic net.

All three fit on column-centred predictors and a centred target; the
training means are stored with the model and the intercept is never
penalised.
"""

from __future__ import annotations

import warnings

import numba
import numpy as np

from .base import FittedModel, LearnerError, TrainingSet, register_predictor

MAX_SWEEPS = 10_000
CD_TOL = 1e-7


def _center(ts: TrainingSet):
    x_mean = ts.X.mean(axis=0)
    y_mean = float(ts.y.mean())
    return ts.X - x_mean, ts.y - y_mean, x_mean, y_mean


def _linear_model(family, coef, x_mean, y_mean, hyper, n_features, info=None):
    return FittedModel(
        family,
        {"coef": np.asarray(coef, dtype=float), "x_mean": np.asarray(x_mean, dtype=float), "y_mean": float(y_mean)},
        dict(hyper),
        None,
        n_features,
        info or {},
    )


@register_predictor("pcr", "pls", "elastic_net", "ols")
def _predict_linear(m: FittedModel, X: np.ndarray) -> np.ndarray:
    return m.params["y_mean"] + (X - m.params["x_mean"]) @ m.params["coef"]


def fit_ols(ts: TrainingSet) -> FittedModel:
    Xc, yc, xm, ym = _center(ts)
    coef, *_ = np.linalg.lstsq(Xc, yc, rcond=None)
    return _linear_model("ols", coef, xm, ym, {}, ts.p)


def fit_pcr(ts: TrainingSet, K: int) -> FittedModel:
    """Regress the target on the first ``K`` principal components."""
    if K < 1:
        raise LearnerError("K must be >= 1")
    Xc, yc, xm, ym = _center(ts)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = s.max(initial=0.0) * max(Xc.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    if K > rank:
        warnings.warn(f"PCR: K={K} exceeds rank {rank}; using K={rank}", stacklevel=2)
        K = rank
    if K == 0:
        return _linear_model("pcr", np.zeros(ts.p), xm, ym, {"K": 0}, ts.p)
    W = vt[:K].T.copy()
    # sign convention: largest-magnitude loading positive
    flip = np.sign(W[np.argmax(np.abs(W), axis=0), np.arange(K)])
    W *= flip
    Z = Xc @ W
    theta, *_ = np.linalg.lstsq(Z, yc, rcond=None)
    return _linear_model("pcr", W @ theta, xm, ym, {"K": K}, ts.p, {"weights": W, "theta": theta})


def fit_pls(ts: TrainingSet, K: int) -> FittedModel:
    """SIMPLS for a single response (de Jong's algorithm).

    Each weight vector maximises w'X'yy'Xw at unit norm, with the
    cross-product vector deflated so new scores are orthogonal to earlier
    ones.
    """
    if K < 1:
        raise LearnerError("K must be >= 1")
    Xc, yc, xm, ym = _center(ts)
    n, p = Xc.shape
    K = min(K, n, p)
    s = Xc.T @ yc
    scale = np.linalg.norm(Xc) * np.linalg.norm(yc)
    R, V, Q, W = [], [], [], []
    for _ in range(K):
        if np.linalg.norm(s) <= 1e-12 * max(scale, 1e-300):
            break
        w = s / np.linalg.norm(s)
        r = w.copy()
        t = Xc @ r
        tn = np.linalg.norm(t)
        if tn == 0.0:
            break
        t /= tn
        r /= tn
        pload = Xc.T @ t
        q = float(yc @ t)
        v = pload.copy()
        for vj in V:
            v -= vj * (vj @ pload)
        vn = np.linalg.norm(v)
        if vn == 0.0:
            break
        v /= vn
        s = s - v * (v @ s)
        R.append(r)
        V.append(v)
        Q.append(q)
        W.append(w)
    if not R:
        warnings.warn("PLS: target orthogonal to predictors; zero model", stacklevel=2)
        return _linear_model("pls", np.zeros(p), xm, ym, {"K": 0}, p)
    Rm = np.column_stack(R)
    coef = Rm @ np.array(Q)
    return _linear_model("pls", coef, xm, ym, {"K": len(R)}, p, {"weights": np.column_stack(W)})


@numba.njit(cache=True)
def _cd_gram(G, c, lam, alpha, theta, max_sweeps, tol):
    """Cyclic coordinate descent on the Gram form.

    Minimises theta'G theta - 2c'theta + lam*sum(alpha|t| + (1-alpha) t^2),
    i.e. the (1/n)-scaled least squares objective with G = X'X/n, c = X'y/n.
    """
    p = G.shape[0]
    l1 = lam * alpha / 2.0
    l2 = lam * (1.0 - alpha)
    grad = c - G @ theta
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            old = theta[j]
            rho = grad[j] + G[j, j] * old
            if rho > l1:
                new = (rho - l1) / (G[j, j] + l2)
            elif rho < -l1:
                new = (rho + l1) / (G[j, j] + l2)
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                theta[j] = new
                for k in range(p):
                    grad[k] -= G[k, j] * d
                if abs(d) > max_change:
                    max_change = abs(d)
        if max_change < tol:
            break
    return sweeps


def fit_elastic_net(ts: TrainingSet, lam: float, alpha: float, *, warm_start=None) -> FittedModel:
    """Minimise (1/n)||y - X theta||^2 + lam * sum(alpha|theta_j| + (1-alpha) theta_j^2)."""
    if lam < 0 or not 0.0 <= alpha <= 1.0:
        raise LearnerError("need lam >= 0 and alpha in [0, 1]")
    Xc, yc, xm, ym = _center(ts)
    n = ts.n
    G = Xc.T @ Xc / n
    c = Xc.T @ yc / n
    if lam == 0.0:
        # unpenalised: coordinate descent on a singular Gram matrix can stall,
        # least squares gives the minimum-norm minimiser directly
        coef, *_ = np.linalg.lstsq(Xc, yc, rcond=None)
        return _linear_model("elastic_net", coef, xm, ym, {"lam": lam, "alpha": alpha}, ts.p, {"sweeps": 0})
    theta = np.zeros(ts.p) if warm_start is None else np.array(warm_start, dtype=float)
    sweeps = _cd_gram(G, c, float(lam), float(alpha), theta, MAX_SWEEPS, CD_TOL)
    return _linear_model("elastic_net", theta, xm, ym, {"lam": lam, "alpha": alpha}, ts.p, {"sweeps": int(sweeps)})
