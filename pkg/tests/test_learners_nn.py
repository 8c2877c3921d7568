import numpy as np
import pytest

from condbeta.learners import LearnerError, TrainingSet, fit_ffnn, predict
from condbeta.learners import nn


def _random_net(rng, p=4, depth=3):
    params = nn.init_params(p, depth, rng, 0.3)
    # non-trivial frozen statistics and BN affine terms
    for l in range(depth):
        w = params[f"g{l}"].size
        params[f"rm{l}"] = rng.normal(scale=0.3, size=w)
        params[f"rv{l}"] = rng.uniform(0.5, 2.0, size=w)
        params[f"g{l}"] = rng.uniform(0.5, 1.5, size=w)
        params[f"be{l}"] = rng.normal(scale=0.5, size=w)
    return params


def gradient_probe_errors(seed: int, probes: int = 20, depth: int = 3, h: float = 1e-6):
    """Relative errors of analytic vs central-difference gradients on random entries."""
    rng = np.random.default_rng(seed)
    params = _random_net(rng, depth=depth)
    X = rng.normal(size=(5, 4))
    y = rng.normal(size=5)
    _, grads, _ = nn.loss_and_grads(params, X, y, train=False)
    names = nn.trainable(params)
    errs = []
    while len(errs) < probes:
        k = names[rng.integers(len(names))]
        idx = tuple(rng.integers(s) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + h
        up = nn.loss_and_grads(params, X, y, train=False)[0]
        params[k][idx] = old - h
        dn = nn.loss_and_grads(params, X, y, train=False)[0]
        params[k][idx] = old
        num = (up - dn) / (2 * h)
        ana = grads[k][idx]
        scale = max(abs(num), abs(ana))
        if scale < 1e-7:
            # dead unit: both sides are zero
            errs.append(abs(num - ana))
            continue
        errs.append(abs(num - ana) / scale)
    return np.array(errs)


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_gradient_matches_finite_differences(depth):
    errs = gradient_probe_errors(depth, probes=20, depth=depth)
    assert errs.max() <= 1e-4


def test_training_mode_gradient_matches_finite_differences():
    # with batch statistics the normalisation couples the rows
    rng = np.random.default_rng(3)
    params = _random_net(rng, depth=2)
    X = rng.normal(size=(8, 4))
    y = rng.normal(size=8)
    _, grads, _ = nn.loss_and_grads(params, X, y, train=True)
    h = 1e-6
    for k in ("W0", "b1", "g0"):
        idx = (0, 0) if params[k].ndim == 2 else (1,)
        old = params[k][idx]
        params[k][idx] = old + h
        up = nn.loss_and_grads(params, X, y, train=True)[0]
        params[k][idx] = old - h
        dn = nn.loss_and_grads(params, X, y, train=True)[0]
        params[k][idx] = old
        num = (up - dn) / (2 * h)
        assert grads[k][idx] == pytest.approx(num, rel=1e-4, abs=1e-9)


def _linear_problem(seed, n=300, p=5):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=p)
    X = rng.normal(size=(n, p))
    Xv = rng.normal(size=(100, p))
    return (TrainingSet(X, X @ theta + 0.1 * rng.normal(size=n)),
            TrainingSet(Xv, Xv @ theta + 0.1 * rng.normal(size=100)))


def test_ensemble_learns_linear_signal():
    ts, val = _linear_problem(0)
    m = fit_ffnn(ts, val, lr=0.01, dropout=0.1, depth=2, seed_count=3, max_epochs=60, batch_size=64)
    mse = np.mean((val.y - predict(m, val.X)) ** 2)
    assert mse <= np.var(val.y)
    assert mse <= 0.25 * np.var(val.y)


def test_ensemble_is_member_mean():
    ts, val = _linear_problem(1)
    m = fit_ffnn(ts, val, lr=0.01, dropout=0.2, depth=1, seed_count=4, max_epochs=5, batch_size=64)
    members = nn.member_predictions(m, val.X)
    assert members.shape == (4, 100)
    assert np.max(np.abs(predict(m, val.X) - members.mean(axis=0))) <= 1e-12
    # members differ: each seed draws its own initialisation
    assert not np.allclose(members[0], members[1])


def test_prediction_has_no_dropout():
    ts, val = _linear_problem(2)
    m = fit_ffnn(ts, val, lr=0.01, dropout=0.3, depth=3, seed_count=2, max_epochs=3, batch_size=64)
    assert np.array_equal(predict(m, val.X), predict(m, val.X))


def test_fit_is_deterministic_in_seed():
    ts, val = _linear_problem(4)
    kw = dict(lr=0.01, dropout=0.1, depth=1, seed_count=2, max_epochs=4, batch_size=64)
    a = predict(fit_ffnn(ts, val, seed=7, **kw), val.X)
    b = predict(fit_ffnn(ts, val, seed=7, **kw), val.X)
    c = predict(fit_ffnn(ts, val, seed=8, **kw), val.X)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_bad_depth_and_empty_validation():
    ts, val = _linear_problem(5)
    with pytest.raises(LearnerError):
        fit_ffnn(ts, val, depth=4, seed_count=1, max_epochs=1)
    with pytest.raises(LearnerError):
        fit_ffnn(ts, TrainingSet(np.empty((0, 5)), np.empty(0)), seed_count=1, max_epochs=1)


def test_diverging_seed_retried_then_dropped(monkeypatch):
    ts, val = _linear_problem(6)
    real = nn._train_one
    calls = []

    def flaky(ts_, val_, lr, *args):
        seed = args[-1]
        calls.append((seed, lr))
        if len(calls) <= 2:  # first member diverges on both attempts
            return None
        return real(ts_, val_, lr, *args)

    monkeypatch.setattr(nn, "_train_one", flaky)
    with pytest.warns(UserWarning, match="diverged"):
        m = fit_ffnn(ts, val, lr=0.01, depth=1, seed_count=3, max_epochs=2, batch_size=64)
    assert m.info["members"] == 2
    assert calls[1][1] == pytest.approx(calls[0][1] / 2)
    assert calls[0][0] == calls[1][0]


def test_all_seeds_diverging_is_an_error(monkeypatch):
    ts, val = _linear_problem(7)
    monkeypatch.setattr(nn, "_train_one", lambda *a: None)
    with pytest.raises(LearnerError), pytest.warns(UserWarning):
        fit_ffnn(ts, val, seed_count=2, max_epochs=1)
