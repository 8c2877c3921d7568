"""Feed-forward network ensemble trained with Adam.

Hidden layers are Linear -> BatchNorm -> ReLU -> Dropout with widths
32/16/8 truncated to the requested depth. Each ensemble member is trained
from its own seed with validation early stopping; predictions average the
members in evaluation mode (running batch-norm statistics, no dropout).
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from .base import FittedModel, LearnerError, TrainingSet, register_predictor

logger = logging.getLogger(__name__)

WIDTHS = (32, 16, 8)
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def init_params(p: int, depth: int, rng: np.random.Generator, y_mean: float = 0.0) -> dict:
    """He-uniform weights, zero biases, unit BN scale; output bias at ``y_mean``."""
    if depth not in (1, 2, 3):
        raise LearnerError("network depth must be 1, 2 or 3")
    params = {}
    fan_in = p
    for l, width in enumerate(WIDTHS[:depth]):
        bound = np.sqrt(6.0 / fan_in)
        params[f"W{l}"] = rng.uniform(-bound, bound, size=(fan_in, width))
        params[f"b{l}"] = np.zeros(width)
        params[f"g{l}"] = np.ones(width)
        params[f"be{l}"] = np.zeros(width)
        params[f"rm{l}"] = np.zeros(width)
        params[f"rv{l}"] = np.ones(width)
        fan_in = width
    bound = np.sqrt(6.0 / fan_in)
    params["Wout"] = rng.uniform(-bound, bound, size=(fan_in, 1))
    params["bout"] = np.array([y_mean])
    return params


def trainable(params: dict) -> list[str]:
    return [k for k in params if not k.startswith(("rm", "rv"))]


def depth_of(params: dict) -> int:
    return sum(1 for k in params if k.startswith("W") and k != "Wout")


def forward(params, X, *, train: bool, dropout: float = 0.0, rng=None):
    """Return (prediction, cache). In train mode BN uses batch statistics
    and dropout masks are drawn from ``rng``; otherwise running statistics."""
    cache = []
    a = X
    for l in range(depth_of(params)):
        z = a @ params[f"W{l}"] + params[f"b{l}"]
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
        else:
            mu = params[f"rm{l}"]
            var = params[f"rv{l}"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * inv
        u = params[f"g{l}"] * zhat + params[f"be{l}"]
        h = np.maximum(u, 0.0)
        if train and dropout > 0.0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
        else:
            mask = None
        out = h * mask if mask is not None else h
        cache.append({"a": a, "z": z, "mu": mu, "var": var, "inv": inv, "zhat": zhat, "u": u, "mask": mask})
        a = out
    pred = (a @ params["Wout"] + params["bout"]).ravel()
    cache.append({"a": a})
    return pred, cache


def loss_and_grads(params, X, y, *, train: bool, dropout: float = 0.0, rng=None):
    """Mean squared error and its gradient w.r.t. every trainable parameter.

    With ``train=False`` the batch-norm statistics are treated as constants.
    """
    pred, cache = forward(params, X, train=train, dropout=dropout, rng=rng)
    n = X.shape[0]
    resid = pred - y
    loss = float(np.mean(resid ** 2))
    grads = {}
    dpred = (2.0 / n) * resid[:, None]
    a_last = cache[-1]["a"]
    grads["Wout"] = a_last.T @ dpred
    grads["bout"] = dpred.sum(axis=0)
    da = dpred @ params["Wout"].T
    for l in reversed(range(depth_of(params))):
        c = cache[l]
        dh = da * c["mask"] if c["mask"] is not None else da
        du = dh * (c["u"] > 0)
        grads[f"g{l}"] = (du * c["zhat"]).sum(axis=0)
        grads[f"be{l}"] = du.sum(axis=0)
        dzhat = du * params[f"g{l}"]
        if train:
            m = dzhat.shape[0]
            dz = (c["inv"] / m) * (m * dzhat - dzhat.sum(axis=0) - c["zhat"] * (dzhat * c["zhat"]).sum(axis=0))
        else:
            dz = dzhat * c["inv"]
        grads[f"W{l}"] = c["a"].T @ dz
        grads[f"b{l}"] = dz.sum(axis=0)
        da = dz @ params[f"W{l}"].T
    return loss, grads, cache


def _predict_net(params, X):
    return forward(params, X, train=False)[0]


class _Adam:
    def __init__(self, params, lr):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(params[k]) for k in trainable(params)}
        self.v = {k: np.zeros_like(params[k]) for k in trainable(params)}

    def step(self, params, grads):
        b1, b2 = ADAM_BETAS
        self.t += 1
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def _train_one(ts, validation, lr, dropout, depth, max_epochs, patience, batch_size, seed):
    """Train a single network; returns params or None if the loss diverged."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    params = init_params(ts.p, depth, rng, float(ts.y.mean()))
    opt = _Adam(params, lr)
    best = {k: v.copy() for k, v in params.items()}
    best_mse = np.inf
    stale = 0
    for _ in range(max_epochs):
        order = rng.permutation(ts.n)
        for start in range(0, ts.n, batch_size):
            idx = order[start:start + batch_size]
            if idx.size < 2:
                continue
            loss, grads, cache = loss_and_grads(params, ts.X[idx], ts.y[idx], train=True, dropout=dropout, rng=rng)
            if not np.isfinite(loss):
                return None
            opt.step(params, grads)
            for l in range(depth):
                params[f"rm{l}"] = BN_MOMENTUM * params[f"rm{l}"] + (1 - BN_MOMENTUM) * cache[l]["mu"]
                params[f"rv{l}"] = BN_MOMENTUM * params[f"rv{l}"] + (1 - BN_MOMENTUM) * cache[l]["var"]
        val = _predict_net(params, validation.X)
        mse = float(np.mean((validation.y - val) ** 2))
        if not np.isfinite(mse):
            return None
        if mse < best_mse:
            best_mse = mse
            best = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best


def fit_ffnn(
    ts: TrainingSet,
    validation: TrainingSet,
    lr: float = 0.001,
    dropout: float = 0.1,
    depth: int = 1,
    seed_count: int = 10,
    *,
    seed: int = 0,
    max_epochs: int = 100,
    patience: int = 5,
    batch_size: int = 256,
) -> FittedModel:
    if validation.n < 1:
        raise LearnerError("the network needs a nonempty validation set")
    member_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(seed_count)]
    nets = []
    for s in member_seeds:
        net = _train_one(ts, validation, lr, dropout, depth, max_epochs, patience, batch_size, s)
        if net is None:
            net = _train_one(ts, validation, lr / 2, dropout, depth, max_epochs, patience, batch_size, s)
            if net is None:
                warnings.warn(f"network seed {s} diverged twice; dropped from the ensemble", stacklevel=2)
                continue
        for v in net.values():
            v.setflags(write=False)
        nets.append(net)
    if not nets:
        raise LearnerError("every ensemble member diverged")
    hyper = {"lr": lr, "dropout": dropout, "depth": depth, "seed_count": seed_count,
             "max_epochs": max_epochs, "patience": patience, "batch_size": batch_size}
    return FittedModel("ffnn", {"nets": nets}, hyper, seed, ts.p, {"members": len(nets)})


@register_predictor("ffnn")
def _predict_ffnn(m: FittedModel, X: np.ndarray) -> np.ndarray:
    preds = [_predict_net(net, X) for net in m.params["nets"]]
    return np.mean(preds, axis=0)


def member_predictions(m: FittedModel, X) -> np.ndarray:
    return np.vstack([_predict_net(net, np.asarray(X, dtype=float)) for net in m.params["nets"]])
