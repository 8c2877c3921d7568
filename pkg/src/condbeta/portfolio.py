"""Single-factor covariance forecasts and market-neutral minimum-variance
portfolios.

The quadratic program

    minimise   w' S w
    subject to sum(w) = 1,  w . beta = 0,  -0.3 <= w_i <= 0.3

is solved by a primal active-set method. With S = s * beta beta' + D
(D diagonal) every equality-constrained subproblem reduces to a 2 x 2
system through Sherman-Morrison, so an iteration costs O(N).
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .evaluation import DensitySummary, density_summary
from .panel_store import ReturnPanel, month_str, to_month
from .pipeline import ForecastPanel

logger = logging.getLogger(__name__)

WEIGHT_BOUND = 0.3
RESID_FLOOR = 1e-8
MIN_COV_OBS = 60
COV_WINDOW_MONTHS = 24


class QpInfeasibleError(ValueError):
    """No weight vector satisfies both equalities inside the box.

    ``certificate`` is a vector y with max_{w in box} y'Aw < y'b.
    """

    def __init__(self, msg, certificate=None):
        super().__init__(msg)
        self.certificate = certificate


@dataclass(frozen=True)
class FactorCovariance:
    betas: np.ndarray
    market_var: float
    resid_var: np.ndarray
    excluded: tuple = ()

    def __post_init__(self):
        if not self.market_var > 0:
            raise ValueError("market variance must be positive")
        if np.any(np.asarray(self.resid_var) <= 0):
            raise ValueError("residual variances must be strictly positive")

    def matrix(self) -> np.ndarray:
        b = np.asarray(self.betas, dtype=float)
        return self.market_var * np.outer(b, b) + np.diag(self.resid_var)


def build_factor_cov(betas, market_returns, asset_returns, min_obs: int = MIN_COV_OBS,
                     asset_ids=None) -> tuple[FactorCovariance, np.ndarray]:
    """Covariance implied by one market factor plus diagonal residuals.

    Residuals use the supplied betas: e = r_i - beta_i r_m on the asset's
    valid days. Returns the covariance over the kept assets and a boolean
    mask of kept columns (assets with fewer than ``min_obs`` days dropped).
    """
    betas = np.asarray(betas, dtype=float)
    rm = np.asarray(market_returns, dtype=float)
    R = np.asarray(asset_returns, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    ok = np.isfinite(R)
    keep = ok.sum(axis=0) >= min_obs
    if not keep.all():
        dropped = np.flatnonzero(~keep)
        names = [asset_ids[j] for j in dropped] if asset_ids is not None else dropped.tolist()
        logger.info("excluded %d asset(s) with fewer than %d daily observations: %s", dropped.size, min_obs, names[:10])
    resid_var = np.empty(int(keep.sum()))
    for k, j in enumerate(np.flatnonzero(keep)):
        e = R[ok[:, j], j] - betas[j] * rm[ok[:, j]]
        resid_var[k] = max(float(np.var(e, ddof=1)), RESID_FLOOR)
    excluded = tuple(np.flatnonzero(~keep).tolist())
    return FactorCovariance(betas[keep], float(np.var(rm, ddof=1)), resid_var, excluded), keep


@dataclass(frozen=True)
class QpSolution:
    weights: np.ndarray
    objective: float
    active_bounds: tuple
    multipliers: np.ndarray
    bound_multipliers: np.ndarray = field(repr=False, default=None)
    iterations: int = 0


def _phase_one(betas, lo, hi):
    """A feasible point of the equalities within the box, or an infeasibility certificate."""
    n = betas.size
    A = np.vstack([np.ones(n), betas])
    b = np.array([1.0, 0.0])
    # minimise total equality violation with slack pairs
    c = np.concatenate([np.zeros(n), np.ones(4)])
    A_eq = np.hstack([A, np.eye(2), -np.eye(2)])
    bounds = [(lo, hi)] * n + [(0, None)] * 4
    res = linprog(c, A_eq=A_eq, b_eq=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise QpInfeasibleError(f"phase-1 linear program failed: {res.message}")
    if res.fun > 1e-9:
        y = np.asarray(res.eqlin.marginals, dtype=float)
        raise QpInfeasibleError(
            f"no portfolio satisfies full investment and zero beta within [{lo}, {hi}] "
            f"(minimum violation {res.fun:.3g})",
            certificate=y,
        )
    return np.clip(res.x[:n], lo, hi)


class _Structured:
    """Q = D + s b b' restricted to an index set, with O(n) solves."""

    def __init__(self, d, s, b):
        self.d, self.s, self.b = d, s, b
        dib = b / d
        self.dib = dib
        self.denom = 1.0 + s * (b @ dib)

    def solve(self, v):
        """Q^{-1} v for a vector or a (n x k) matrix."""
        div = v / (self.d if v.ndim == 1 else self.d[:, None])
        return div - np.outer(self.dib, self.s * (self.b @ div) / self.denom).reshape(div.shape)


def solve_min_variance_neutral(cov: FactorCovariance, betas=None, bound: float = WEIGHT_BOUND,
                               max_iter: int | None = None, tol: float = 1e-12) -> QpSolution:
    """Market-neutral fully-invested minimum variance with a +/- ``bound`` box."""
    beta = np.asarray(cov.betas if betas is None else betas, dtype=float)
    n = beta.size
    if n < 2:
        raise ValueError("need at least two assets")
    lo, hi = -bound, bound
    d = np.asarray(cov.resid_var, dtype=float)
    s = float(cov.market_var)
    fb = np.asarray(cov.betas, dtype=float)  # betas inside the covariance
    A = np.vstack([np.ones(n), beta])
    b = np.array([1.0, 0.0])

    w = _phase_one(beta, lo, hi)
    at_lo = w <= lo + 1e-12
    at_hi = w >= hi - 1e-12
    w[at_lo], w[at_hi] = lo, hi
    working = at_lo | at_hi

    def ensure_rank(working):
        free = ~working
        while np.linalg.matrix_rank(A[:, free]) < 2:
            # release a bound whose column raises the rank
            released = False
            for j in np.flatnonzero(working):
                trial = free.copy()
                trial[j] = True
                if np.linalg.matrix_rank(A[:, trial]) > np.linalg.matrix_rank(A[:, free]):
                    working[j] = False
                    free = trial
                    released = True
                    break
            if not released:
                break
        return working

    working = ensure_rank(working)
    # repair the phase-1 equality residual on the free set (minimum-norm shift)
    free = ~working
    resid = b - A @ w
    if np.any(np.abs(resid) > 0):
        Af = A[:, free]
        shift = Af.T @ np.linalg.solve(Af @ Af.T, resid)
        w[free] += shift

    max_iter = max_iter or 20 * n + 100
    nu = np.zeros(2)
    mu = np.zeros(n)
    for it in range(1, max_iter + 1):
        free = ~working
        F = np.flatnonzero(free)
        B = np.flatnonzero(working)
        # subproblem on free variables: min wF'Q wF + c'wF  s.t. A_F wF = b - A_B wB
        Q = _Structured(d[F], s, fb[F])
        c = 2.0 * s * fb[F] * (fb[B] @ w[B])
        rhs = b - A[:, B] @ w[B]
        AF = A[:, F]
        QiA = Q.solve(AF.T)          # |F| x 2
        Qic = Q.solve(c)
        M = AF @ QiA
        nu = np.linalg.solve(M, 2.0 * rhs + AF @ Qic)
        target = (QiA @ nu - Qic) / 2.0
        p = target - w[F]
        if np.max(np.abs(p), initial=0.0) <= tol * max(1.0, np.max(np.abs(w))):
            w[F] = target
            grad = 2.0 * (d * w + s * fb * (fb @ w))
            mu = grad - A.T @ nu
            # lower bounds need mu >= 0, upper bounds mu <= 0
            viol = np.zeros(n)
            lo_set = working & (w <= lo + 1e-15)
            hi_set = working & ~lo_set
            viol[lo_set] = -mu[lo_set]
            viol[hi_set] = mu[hi_set]
            j = int(np.argmax(viol))
            if viol[j] <= 1e-12 * max(1.0, np.abs(grad).max()):
                break
            working[j] = False
            continue
        # longest feasible step along p
        alpha, block = 1.0, -1
        for k, i in enumerate(F):
            if p[k] > 0:
                step = (hi - w[i]) / p[k]
            elif p[k] < 0:
                step = (lo - w[i]) / p[k]
            else:
                continue
            if step < alpha:
                alpha, block = step, i
        w[F] += alpha * p
        if block >= 0:
            w[block] = hi if p[list(F).index(block)] > 0 else lo
            working[block] = True
    else:
        warnings.warn("active-set solver hit the iteration limit", stacklevel=2)

    w[working & (w < 0)] = lo
    w[working & (w > 0)] = hi
    grad = 2.0 * (d * w + s * fb * (fb @ w))
    mu = np.where(working, grad - A.T @ nu, 0.0)
    obj = float(np.sum(d * w * w) + s * (fb @ w) ** 2)
    return QpSolution(w.copy(), obj, tuple(np.flatnonzero(working).tolist()), nu, mu, it)


# --------------------------------------------------------------------------
# formation and tracking


@dataclass(frozen=True)
class PortfolioTrack:
    months: np.ndarray           # target (holding-window end) months
    ex_post_beta: np.ndarray
    weights: list                # per month: (asset ids, weights)
    infeasible: list
    density: DensitySummary | None
    label: str = ""


def _window_block(rp: ReturnPanel, end_month, months: int):
    end = to_month(end_month)
    start = end - np.timedelta64(months - 1, "M")
    mi = rp.month_index
    sel = (mi >= start) & (mi <= end)
    return rp.market_returns[sel], rp.returns[sel]


def form_and_track(
    fp: ForecastPanel,
    rp: ReturnPanel,
    caps: dict | None = None,
    *,
    use: str = "forecast",
    top_n: int = 500,
    window_months: int = COV_WINDOW_MONTHS,
    min_obs: int = MIN_COV_OBS,
) -> PortfolioTrack:
    """Form a portfolio for every target month of a single (model, kind, h) cell.

    The portfolio for target month T is formed at month T - h from the
    chosen betas (``use`` = "forecast" or "benchmark") with a covariance
    estimated on the two years of daily data ending at T - h. Its ex-post
    beta is the weighted realized beta of the window ending at T.
    ``caps`` maps month -> {asset: market cap} for the top-N universe.
    """
    if len(set(fp.horizon)) > 1:
        raise ValueError("pass a single-horizon forecast panel")
    h = int(fp.horizon[0]) if len(fp) else 1
    betas_col = fp.forecast if use == "forecast" else fp.benchmark
    months_out, ex_post, weights, infeasible = [], [], [], []
    for T in np.unique(fp.target_month):
        idx = np.flatnonzero(fp.target_month == T)
        assets = fp.asset[idx]
        formation = T - np.timedelta64(h, "M")
        if caps is not None:
            cap_m = caps.get(month_str(formation), {})
            order = sorted(range(idx.size), key=lambda k: (-cap_m.get(assets[k], -np.inf), assets[k]))
            if idx.size < top_n:
                warnings.warn(f"{month_str(formation)}: only {idx.size} assets available (< {top_n})", stacklevel=2)
            idx = idx[np.array(order[:top_n], dtype=int)]
        elif idx.size > top_n:
            idx = idx[:top_n]
        assets = fp.asset[idx]
        rm, R = _window_block(rp, formation, window_months)
        cols = [rp.asset_position(a) for a in assets]
        try:
            cov, keep = build_factor_cov(betas_col[idx], rm, R[:, cols], min_obs=min_obs, asset_ids=list(assets))
            sol = solve_min_variance_neutral(cov)
        except (QpInfeasibleError, ValueError) as exc:
            infeasible.append((month_str(T), str(exc)))
            continue
        kept = idx[keep]
        months_out.append(T)
        ex_post.append(float(sol.weights @ fp.realization[kept]))
        weights.append((tuple(fp.asset[kept]), sol.weights))
    dens = density_summary(ex_post) if len(ex_post) >= 1 else None
    return PortfolioTrack(np.array(months_out, dtype="datetime64[M]"), np.array(ex_post), weights,
                          infeasible, dens, use)


def write_weights(track: PortfolioTrack, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "asset", "weight"])
        for m, (assets, wts) in zip(track.months, track.weights):
            for a, x in zip(assets, wts):
                w.writerow([month_str(m), a, repr(float(x))])


def write_track(track: PortfolioTrack, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "ex_post_beta"])
        for m, b in zip(track.months, track.ex_post_beta):
            w.writerow([month_str(m), repr(float(b))])
