import numpy as np
import pytest
from _qp_oracle import project
from _qp_oracle import solve as oracle_solve
from _world import build_world

from condbeta.panel_store import month_str
from condbeta.pipeline import ForecastPanel, benchmark_forecast
from condbeta.portfolio import (
    FactorCovariance,
    QpInfeasibleError,
    build_factor_cov,
    form_and_track,
    solve_min_variance_neutral,
    write_track,
    write_weights,
)


def random_instance(seed, n=20):
    """A feasible random instance (betas straddle zero often enough)."""
    rng = np.random.default_rng(seed)
    while True:
        b = rng.normal(1.0, 0.6, size=n)
        cov = FactorCovariance(b, rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.1, size=n))
        try:
            return cov, solve_min_variance_neutral(cov)
        except QpInfeasibleError:
            continue


def residuals(sol, beta, bound=0.3):
    w = sol.weights
    return max(abs(w.sum() - 1.0), abs(w @ beta), max(0.0, np.abs(w).max() - bound))


# --------------------------------------------------------------------------
# covariance


def test_factor_cov_hand_example():
    cov = FactorCovariance(np.array([1.0, 1.0]), 0.04, np.array([0.01, 0.02]))
    assert np.allclose(cov.matrix(), [[0.05, 0.04], [0.04, 0.06]], rtol=0, atol=1e-15)


def test_factor_cov_zero_beta_is_diagonal():
    cov = FactorCovariance(np.zeros(3), 0.04, np.array([0.01, 0.02, 0.03]))
    assert np.array_equal(cov.matrix(), np.diag([0.01, 0.02, 0.03]))


def test_build_factor_cov_estimates(rng):
    rm = rng.normal(scale=0.01, size=100)
    R = np.column_stack([1.2 * rm, 0.5 * rm + rng.normal(scale=0.02, size=100)])
    cov, keep = build_factor_cov([1.2, 0.5], rm, R)
    assert keep.all()
    assert cov.market_var == pytest.approx(np.var(rm, ddof=1), rel=1e-14)
    # exact factor returns leave only the floor
    assert cov.resid_var[0] == 1e-8
    assert cov.resid_var[1] == pytest.approx(np.var(R[:, 1] - 0.5 * rm, ddof=1), rel=1e-14)
    m = cov.matrix()
    assert np.allclose(m, cov.market_var * np.outer(cov.betas, cov.betas) + np.diag(cov.resid_var), rtol=0, atol=0)


def test_build_factor_cov_excludes_short_history(rng):
    rm = rng.normal(scale=0.01, size=80)
    R = rng.normal(scale=0.01, size=(80, 3))
    R[:30, 1] = np.nan
    cov, keep = build_factor_cov([1.0, 1.0, 1.0], rm, R, min_obs=60)
    assert keep.tolist() == [True, False, True]
    assert cov.excluded == (1,) and cov.betas.size == 2


# --------------------------------------------------------------------------
# solver


def test_symmetric_case_equal_weights():
    cov = FactorCovariance(np.zeros(4), 1.0, np.ones(4))
    sol = solve_min_variance_neutral(cov, betas=np.array([1.0, 1.0, -1.0, -1.0]))
    assert sol.weights.tolist() == [0.25, 0.25, 0.25, 0.25]


def test_infeasible_with_certificate():
    cov = FactorCovariance(np.ones(4), 0.04, np.full(4, 0.01))
    with pytest.raises(QpInfeasibleError) as info:
        solve_min_variance_neutral(cov)
    y = info.value.certificate
    A = np.vstack([np.ones(4), np.ones(4)])
    b = np.array([1.0, 0.0])
    # the best the box can do on y'Aw falls short of y'b (or exceeds it, for -y)
    c = y @ A
    best_hi, best_lo = np.sum(np.abs(c)) * 0.3, -np.sum(np.abs(c)) * 0.3
    assert best_hi < y @ b or best_lo > y @ b


def test_box_too_tight_infeasible():
    cov = FactorCovariance(np.array([1.0, -1.0, 0.5]), 0.04, np.full(3, 0.01))
    with pytest.raises(QpInfeasibleError):
        solve_min_variance_neutral(cov, bound=0.2)  # sum of weights cannot reach 1


@pytest.mark.parametrize("seed", range(20))
def test_matches_projected_gradient_oracle(seed):
    cov, sol = random_instance(seed)
    _, obj = oracle_solve(cov.matrix(), cov.betas)
    assert sol.objective == pytest.approx(obj, rel=1e-6)
    assert residuals(sol, cov.betas) <= 1e-8
    assert sol.objective == pytest.approx(sol.weights @ cov.matrix() @ sol.weights, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_kkt_conditions(seed):
    cov, sol = random_instance(100 + seed)
    w, beta = sol.weights, cov.betas
    grad = 2.0 * cov.matrix() @ w
    A = np.vstack([np.ones(w.size), beta])
    at_lo, at_hi = np.isclose(w, -0.3, atol=1e-12), np.isclose(w, 0.3, atol=1e-12)
    free = ~(at_lo | at_hi)
    # multipliers from the free coordinates, then sign checks on the bounds
    nu = np.linalg.lstsq(A[:, free].T, grad[free], rcond=None)[0]
    mu = grad - A.T @ nu
    assert np.max(np.abs(mu[free]), initial=0.0) <= 1e-7
    assert np.all(mu[at_lo] >= -1e-7) and np.all(mu[at_hi] <= 1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_no_feasible_point_beats_solution(seed):
    cov, sol = random_instance(200 + seed)
    S = cov.matrix()
    rng = np.random.default_rng(seed)
    for _ in range(50):
        w = project(rng.normal(scale=0.3, size=cov.betas.size), cov.betas, -0.3, 0.3)
        assert w @ S @ w >= sol.objective - 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_dropping_neutrality_never_hurts(seed):
    cov, sol = random_instance(300 + seed)
    _, relaxed = oracle_solve(cov.matrix(), np.zeros(cov.betas.size))
    assert relaxed <= sol.objective + 1e-12


# --------------------------------------------------------------------------
# formation and tracking


@pytest.fixture(scope="module")
def drifting_world():
    syn, betas, _ = build_world(n_assets=30, n_months=60, idio_vol=0.0, persistence=0.5, seed=21)
    months, bench = benchmark_forecast(betas, "Capm", 1)
    real = betas.get("Capm", 1)
    rows = []
    for i in range(25, months.size):
        for j, a in enumerate(betas.asset_ids):
            if np.isfinite(real[i, j]) and np.isfinite(bench[i, j]):
                rows.append((a, months[i], real[i, j], bench[i, j]))
    a, m, r, b = zip(*rows)
    n = len(rows)
    # perfect-foresight forecasts: the forecast is the realization itself
    fp = ForecastPanel(a, m, ["oracle"] * n, ["Capm"] * n, [1] * n, r, r, b)
    caps = {month_str(mm): dict(zip(syn.meta.asset_ids, syn.meta.mktcap[k]))
            for k, mm in enumerate(syn.meta.months)}
    return syn, fp, caps


def test_perfect_foresight_is_beta_neutral(drifting_world):
    syn, fp, caps = drifting_world
    track = form_and_track(fp, syn.returns, caps, top_n=20, window_months=3, min_obs=40)
    assert track.months.size == np.unique(fp.target_month).size
    assert np.max(np.abs(track.ex_post_beta)) <= 1e-8
    assert abs(track.density.mode) < 0.01


def test_stale_betas_less_neutral(drifting_world):
    syn, fp, caps = drifting_world
    good = form_and_track(fp, syn.returns, caps, top_n=20, window_months=3, min_obs=40)
    stale = form_and_track(fp, syn.returns, caps, use="benchmark", top_n=20, window_months=3, min_obs=40)
    assert np.mean(np.abs(stale.ex_post_beta)) > np.mean(np.abs(good.ex_post_beta))
    assert abs(stale.density.mode) > abs(good.density.mode)


def test_small_universe_warns_and_writes(drifting_world, tmp_path):
    syn, fp, caps = drifting_world
    with pytest.warns(UserWarning, match="only 30 assets"):
        track = form_and_track(fp, syn.returns, caps, top_n=500, window_months=3, min_obs=40)
    write_weights(track, tmp_path / "w.csv")
    write_track(track, tmp_path / "t.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "month,asset,weight" and len(lines) == 1 + 30 * track.months.size
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "month,ex_post_beta"


def test_top_n_by_cap(drifting_world):
    syn, fp, caps = drifting_world
    track = form_and_track(fp, syn.returns, caps, top_n=10, window_months=3, min_obs=40)
    m0 = track.months[0]
    formation = month_str(m0 - np.timedelta64(1, "M"))
    expect = sorted(caps[formation], key=lambda a: -caps[formation][a])[:10]
    assert sorted(track.weights[0][0]) == sorted(expect)
