import warnings

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st

from condbeta.learners import (
    FittedModel,
    HyperGrid,
    LearnerError,
    TrainingSet,
    combine_forecasts,
    fit_elastic_net,
    fit_pcr,
    fit_pls,
    predict,
)


def _ols_oracle(X, y, Xnew):
    res = sm.OLS(y, sm.add_constant(X, has_constant="add")).fit()
    return res.predict(sm.add_constant(Xnew, has_constant="add"))


def _problem(rng, n=200, p=10, noise=0.5):
    X = rng.normal(size=(n, p))
    theta = rng.normal(size=p) * (rng.random(p) < 0.5)
    return X, 1.0 + X @ theta + noise * rng.normal(size=n)


def kkt_violation(m: FittedModel, ts: TrainingSet) -> float:
    """Largest deviation from elastic-net stationarity on the centred problem."""
    lam, alpha = m.hyper["lam"], m.hyper["alpha"]
    Xc = ts.X - ts.X.mean(axis=0)
    yc = ts.y - ts.y.mean()
    th = m.params["coef"]
    g = 2.0 / ts.n * Xc.T @ (yc - Xc @ th) - 2.0 * lam * (1.0 - alpha) * th
    active = th != 0.0
    v_act = np.abs(g[active] - lam * alpha * np.sign(th[active]))
    v_in = np.maximum(np.abs(g[~active]) - lam * alpha, 0.0)
    return float(max(v_act.max(initial=0.0), v_in.max(initial=0.0)))


# --------------------------------------------------------------------------
# PCR


def test_pcr_single_column_is_ols(rng):
    X, y = _problem(rng, p=1)
    m = fit_pcr(TrainingSet(X, y), 1)
    Xn = rng.normal(size=(20, 1))
    assert np.allclose(predict(m, Xn), _ols_oracle(X, y, Xn), atol=1e-10)


def test_pcr_zero_target(rng):
    X = rng.normal(size=(50, 4))
    m = fit_pcr(TrainingSet(X, np.zeros(50)), 3)
    assert np.array_equal(m.params["coef"], np.zeros(4))
    assert np.array_equal(predict(m, X), np.zeros(50))


def test_pcr_orthonormal_full_rank_is_ols(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(60, 5)))
    Q -= Q.mean(axis=0)
    y = Q @ rng.normal(size=5) + 0.1 * rng.normal(size=60)
    m = fit_pcr(TrainingSet(Q, y), 5)
    assert np.allclose(predict(m, Q), _ols_oracle(Q, y, Q), atol=1e-8)


def test_pcr_rank_deficient_warns_and_matches_ols(rng):
    A = rng.normal(size=(80, 3))
    X = np.column_stack([A, A[:, 0] + A[:, 1]])  # rank 3
    y = A @ [1.0, -1.0, 0.5] + 0.1 * rng.normal(size=80)
    with pytest.warns(UserWarning, match="rank"):
        m = fit_pcr(TrainingSet(X, y), 4)
    assert m.hyper["K"] == 3
    ols = np.linalg.lstsq(np.column_stack([np.ones(80), X]), y, rcond=None)[0]
    assert np.allclose(predict(m, X), np.column_stack([np.ones(80), X]) @ ols, atol=1e-8)


def test_pcr_sign_convention(rng):
    X, y = _problem(rng, p=6)
    W = fit_pcr(TrainingSet(X, y), 4).info["weights"]
    for k in range(4):
        assert W[np.argmax(np.abs(W[:, k])), k] > 0


# --------------------------------------------------------------------------
# PLS


def test_pls_single_column_is_ols(rng):
    X, y = _problem(rng, p=1)
    m = fit_pls(TrainingSet(X, y), 1)
    assert np.allclose(predict(m, X), _ols_oracle(X, y, X), atol=1e-10)


def test_pls_first_weight_direction(rng):
    X, y = _problem(rng, p=7)
    m = fit_pls(TrainingSet(X, y), 3)
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    w = Xc.T @ yc
    assert np.allclose(m.info["weights"][:, 0], w / np.linalg.norm(w), atol=1e-12)


def test_pls_orthogonal_target_degenerate():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    # y is orthogonal to both centred columns
    y = np.array([1.0, 1.0, -1.0, -1.0])
    with pytest.warns(UserWarning, match="orthogonal"):
        m = fit_pls(TrainingSet(X, y), 2)
    assert np.allclose(predict(m, X), y.mean())


def test_pls_full_k_is_ols(rng):
    X, y = _problem(rng, p=5)
    m = fit_pls(TrainingSet(X, y), 5)
    assert np.allclose(predict(m, X), _ols_oracle(X, y, X), atol=1e-8)


def test_pls_scores_orthogonal(rng):
    X, y = _problem(rng, p=8)
    m = fit_pls(TrainingSet(X, y), 4)
    coef_k = [fit_pls(TrainingSet(X, y), k).params["coef"] for k in (1, 2, 3, 4)]
    # in-sample fit improves with every added component
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    sse = [np.sum((yc - Xc @ c) ** 2) for c in coef_k]
    assert all(a >= b - 1e-9 for a, b in zip(sse, sse[1:]))
    assert m.hyper["K"] == 4


# --------------------------------------------------------------------------
# elastic net


def test_enet_soft_threshold_example():
    # standardised single column with (1/n) sum x y = 1
    x = np.array([1.0, -1.0, 1.0, -1.0])
    y = x.copy()
    m = fit_elastic_net(TrainingSet(x[:, None], y), 0.6, 1.0)
    assert m.params["coef"][0] == pytest.approx(0.7, abs=1e-12)


def test_enet_ridge_update():
    x = np.array([1.0, -1.0, 1.0, -1.0])
    m = fit_elastic_net(TrainingSet(x[:, None], 2.0 * x), 0.5, 0.0)
    # theta = rho / (1 + lam) with rho = 2
    assert m.params["coef"][0] == pytest.approx(2.0 / 1.5, abs=1e-12)


def test_enet_full_shrinkage(rng):
    X, y = _problem(rng)
    m = fit_elastic_net(TrainingSet(X, y), 1e3, 1.0)
    assert np.array_equal(m.params["coef"], np.zeros(X.shape[1]))
    assert np.allclose(predict(m, X), y.mean())


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_enet_lambda_zero_is_ols(rng, alpha):
    X, y = _problem(rng, p=30)
    m = fit_elastic_net(TrainingSet(X, y), 0.0, alpha)
    assert np.allclose(predict(m, X), _ols_oracle(X, y, X), atol=1e-8)


def test_enet_kkt_on_grid(rng):
    X, y = _problem(rng, n=150, p=20)
    ts = TrainingSet(X, y)
    for c in HyperGrid().candidates("elastic_net", 20):
        m = fit_elastic_net(ts, c["lam"], c["alpha"])
        assert kkt_violation(m, ts) <= 1e-5, c


def test_enet_rejects_bad_inputs(rng):
    X, y = _problem(rng)
    with pytest.raises(LearnerError):
        fit_elastic_net(TrainingSet(X, y), -1.0, 0.5)
    with pytest.raises(LearnerError):
        fit_elastic_net(TrainingSet(X, y), 1.0, 1.5)
    X = X.copy()
    X[0, 0] = np.inf
    with pytest.raises(LearnerError):
        TrainingSet(X, y)


# --------------------------------------------------------------------------
# shared contracts


@given(st.integers(0, 10_000), st.sampled_from(["pcr", "pls", "elastic_net"]))
@settings(max_examples=30, deadline=None)
def test_duplicate_rows_leave_linear_fits_unchanged(seed, family):
    rng = np.random.default_rng(seed)
    X, y = _problem(rng, n=40, p=5)
    fit = {"pcr": lambda t: fit_pcr(t, 3), "pls": lambda t: fit_pls(t, 3),
           "elastic_net": lambda t: fit_elastic_net(t, 0.05, 0.5)}[family]
    a = fit(TrainingSet(X, y))
    b = fit(TrainingSet(np.vstack([X, X]), np.concatenate([y, y])))
    Xn = rng.normal(size=(10, 5))
    assert np.allclose(predict(a, Xn), predict(b, Xn), atol=1e-9)


def test_predict_column_mismatch(rng):
    X, y = _problem(rng, p=4)
    m = fit_pcr(TrainingSet(X, y), 2)
    with pytest.raises(LearnerError, match="4"):
        predict(m, X[:, :3])


def test_predict_deterministic_and_pure(rng):
    X, y = _problem(rng, p=4)
    m = fit_elastic_net(TrainingSet(X, y), 0.01, 0.5)
    before = m.to_json()
    assert np.array_equal(predict(m, X), predict(m, X))
    assert m.to_json() == before


def test_serialization_round_trip(rng):
    X, y = _problem(rng, p=4)
    for m in (fit_pcr(TrainingSet(X, y), 2), fit_pls(TrainingSet(X, y), 2),
              fit_elastic_net(TrainingSet(X, y), 0.01, 0.5)):
        back = FittedModel.from_json(m.to_json())
        assert back.family == m.family and back.hyper == m.hyper
        assert np.array_equal(predict(back, X), predict(m, X))


def test_serialization_version_checked(rng):
    X, y = _problem(rng, p=2)
    blob = fit_pcr(TrainingSet(X, y), 1).to_json().replace('"version": 1', '"version": 99')
    with pytest.raises(LearnerError, match="version"):
        FittedModel.from_json(blob)


def test_combine_forecasts():
    assert combine_forecasts([[1.0, 2.0], [3.0, 4.0]]).tolist() == [2.0, 3.0]
    assert combine_forecasts([[1.0, 2.0]]).tolist() == [1.0, 2.0]
    assert combine_forecasts([[1.0, np.nan], [3.0, 4.0]]).tolist() == [2.0, 4.0]
    out = combine_forecasts([[np.nan], [np.nan]])
    assert np.isnan(out[0])


def test_hypergrid_defaults():
    g = HyperGrid()
    en = g.candidates("elastic_net", 10)
    lams = sorted({c["lam"] for c in en})
    assert len(lams) == 20 and lams[0] == pytest.approx(1e-3) and lams[-1] == pytest.approx(1e3)
    assert sorted({c["alpha"] for c in en}) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert [c["K"] for c in g.candidates("pcr", 10)] == list(range(1, 11))
    rf = g.candidates("rforest", 10)
    assert [c["depth"] for c in rf] == [5, 10, 15, 20]
    assert all(c["n_trees"] == 200 and c["mtry"] == 4 for c in rf)
    gb = g.candidates("gboost", 10)
    assert len(gb) == 4 and all(c["max_trees"] == 500 and c["patience"] == 50 for c in gb)
    nn = g.candidates("ffnn", 10)
    assert len(nn) == 18 and all(c["seed_count"] == 10 and c["max_epochs"] == 100 for c in nn)


def test_hypergrid_range_checks():
    with pytest.raises(LearnerError):
        HyperGrid(pcr_k=(0, 1))
    with pytest.raises(LearnerError):
        HyperGrid(gb_depth=(3,))
    with pytest.raises(LearnerError):
        HyperGrid(enet_lambda=(1e4,))
    with pytest.raises(LearnerError):
        HyperGrid.from_mapping({"nonsense": 1})
    g = HyperGrid.from_mapping({"enet_lambda": {"lo": 0.01, "hi": 1.0, "num": 3}})
    assert g.enet_lambda == pytest.approx((0.01, 0.1, 1.0))
