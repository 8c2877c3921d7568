"""Regression trees, gradient boosting and random forests.

Trees are grown by exhaustive search over midpoints between consecutive
distinct feature values, minimising the children's summed squared error.
Ties go to the lowest feature index, then the lowest threshold. A tree is
stored as flat arrays (feature, threshold, left, right, value); feature -1
marks a leaf. Ensembles concatenate trees and keep per-tree offsets.
"""

from __future__ import annotations

import numba
import numpy as np

from .base import FittedModel, LearnerError, TrainingSet, register_predictor

_MASK64 = (1 << 64) - 1


@numba.njit(cache=True)
def _splitmix(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = z ^ (z >> np.uint64(31))
    return state, z


@numba.njit(cache=True)
def _best_split(X, y, idx, features, min_leaf):
    """Best (feature, threshold, sse) over ``features`` for rows ``idx``."""
    m = idx.size
    best_f = -1
    best_thr = 0.0
    best_sse = np.inf
    xs = np.empty(m)
    ys = np.empty(m)
    # losses within rounding of each other count as ties, which keep the
    # earlier (lower feature, lower threshold) candidate
    scale = 0.0
    for k in range(m):
        scale += y[idx[k]] * y[idx[k]]
    tol = 1e-12 * scale
    for f in features:
        for k in range(m):
            xs[k] = X[idx[k], f]
        order = np.argsort(xs, kind="mergesort")
        tot = 0.0
        tot2 = 0.0
        for k in range(m):
            ys[k] = y[idx[order[k]]]
            tot += ys[k]
            tot2 += ys[k] * ys[k]
        left = 0.0
        left2 = 0.0
        for k in range(m - 1):
            left += ys[k]
            left2 += ys[k] * ys[k]
            nl = k + 1
            nr = m - nl
            if nl < min_leaf:
                continue
            if nr < min_leaf:
                break
            a = xs[order[k]]
            b = xs[order[k + 1]]
            if b <= a:
                continue
            right = tot - left
            right2 = tot2 - left2
            sse = (left2 - left * left / nl) + (right2 - right * right / nr)
            if sse < best_sse - tol:
                best_sse = sse
                best_f = f
                best_thr = a + (b - a) / 2.0
                if best_thr >= b:
                    best_thr = a
    return best_f, best_thr, best_sse


@numba.njit(cache=True)
def _grow(X, y, rows, max_depth, min_leaf, mtry, rng_state):
    """Grow one tree on ``rows`` (may contain repeats). mtry <= 0 means all features."""
    p = X.shape[1]
    cap = 2 * rows.size + 1
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    # explicit stack of (node id, row array, depth)
    stack_nodes = [0]
    stack_rows = [rows]
    stack_depth = [0]
    n_nodes = 1
    all_feats = np.arange(p)
    pool = np.arange(p)
    state = rng_state
    while len(stack_nodes) > 0:
        node = stack_nodes.pop()
        idx = stack_rows.pop()
        depth = stack_depth.pop()
        m = idx.size
        s = 0.0
        s2 = 0.0
        for k in range(m):
            s += y[idx[k]]
            s2 += y[idx[k]] * y[idx[k]]
        value[node] = s / m
        parent_sse = s2 - s * s / m
        if depth >= max_depth or m < 2 * min_leaf or parent_sse <= 1e-14 * max(1.0, s2):
            continue
        if mtry > 0 and mtry < p:
            # partial Fisher-Yates draw, then sort for deterministic tie-breaks
            for k in range(p):
                pool[k] = k
            for k in range(mtry):
                state, r = _splitmix(state)
                j = k + np.int64(r % np.uint64(p - k))
                tmp = pool[k]
                pool[k] = pool[j]
                pool[j] = tmp
            feats = np.sort(pool[:mtry].copy())
        else:
            feats = all_feats
        f, t, sse = _best_split(X, y, idx, feats, min_leaf)
        if f < 0 or not sse < parent_sse - 1e-12 * max(1.0, parent_sse):
            continue
        go_left = np.empty(m, np.bool_)
        nl = 0
        for k in range(m):
            go_left[k] = X[idx[k], f] <= t
            if go_left[k]:
                nl += 1
        li = np.empty(nl, np.int64)
        ri = np.empty(m - nl, np.int64)
        a = 0
        b = 0
        for k in range(m):
            if go_left[k]:
                li[a] = idx[k]
                a += 1
            else:
                ri[b] = idx[k]
                b += 1
        feat[node] = f
        thr[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        # push right first so the left subtree is expanded first
        stack_nodes.append(n_nodes - 1)
        stack_rows.append(ri)
        stack_depth.append(depth + 1)
        stack_nodes.append(n_nodes - 2)
        stack_rows.append(li)
        stack_depth.append(depth + 1)
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@numba.njit(cache=True)
def _predict_forest(X, feat, thr, left, right, value, offsets, weights):
    """Sum over trees of weight_t * tree_t(x); node links are tree-local."""
    n = X.shape[0]
    out = np.zeros(n)
    for t in range(offsets.size - 1):
        base = offsets[t]
        w = weights[t]
        for i in range(n):
            node = 0
            while feat[base + node] >= 0:
                if X[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += w * value[base + node]
    return out


class _Forest:
    """Accumulates grown trees into flat arrays."""

    def __init__(self):
        self.parts = []

    def add(self, tree):
        self.parts.append(tree)

    def arrays(self):
        if not self.parts:
            empty_i = np.zeros(0, np.int64)
            return {
                "feat": empty_i, "thr": np.zeros(0), "left": empty_i, "right": empty_i,
                "value": np.zeros(0), "offsets": np.zeros(1, np.int64),
            }
        sizes = [p[0].size for p in self.parts]
        return {
            "feat": np.concatenate([p[0] for p in self.parts]),
            "thr": np.concatenate([p[1] for p in self.parts]),
            "left": np.concatenate([p[2] for p in self.parts]),
            "right": np.concatenate([p[3] for p in self.parts]),
            "value": np.concatenate([p[4] for p in self.parts]),
            "offsets": np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
        }


def _tree_predict(arrs, X, weights):
    return _predict_forest(
        X, arrs["feat"], arrs["thr"], arrs["left"], arrs["right"], arrs["value"],
        arrs["offsets"], np.asarray(weights, dtype=float),
    )


@register_predictor("tree", "rforest")
def _predict_average(m: FittedModel, X: np.ndarray) -> np.ndarray:
    n_trees = m.params["offsets"].size - 1
    return _tree_predict(m.params, X, np.full(n_trees, 1.0 / n_trees))


@register_predictor("gboost")
def _predict_boost(m: FittedModel, X: np.ndarray) -> np.ndarray:
    n_trees = m.params["offsets"].size - 1
    out = np.full(X.shape[0], m.params["init"])
    if n_trees:
        out += _tree_predict(m.params, X, np.full(n_trees, m.hyper["learning_rate"]))
    return out


def fit_tree(ts: TrainingSet, D: int, min_leaf: int = 5) -> FittedModel:
    if D < 1:
        raise LearnerError("tree depth must be >= 1")
    rows = np.arange(ts.n, dtype=np.int64)
    forest = _Forest()
    forest.add(_grow(ts.X, ts.y, rows, int(D), int(min_leaf), 0, np.uint64(0)))
    return FittedModel("tree", forest.arrays(), {"depth": D, "min_leaf": min_leaf}, None, ts.p)


def fit_gboost(
    ts: TrainingSet,
    validation: TrainingSet,
    max_trees: int = 500,
    depth: int = 1,
    learning_rate: float = 0.1,
    patience: int = 50,
    min_leaf: int = 1,
) -> FittedModel:
    """Stagewise least-squares boosting with validation early stopping.

    The ensemble is truncated at the iteration with the lowest validation
    MSE (zero trees means the training mean).
    """
    if validation is None or validation.n < 1:
        raise LearnerError("gradient boosting needs a nonempty validation set")
    init = float(ts.y.mean())
    fit_pred = np.full(ts.n, init)
    val_pred = np.full(validation.n, init)
    best_mse = float(np.mean((validation.y - val_pred) ** 2))
    best_k = 0
    train_mse = [float(np.mean((ts.y - fit_pred) ** 2))]
    forest = _Forest()
    rows = np.arange(ts.n, dtype=np.int64)
    for k in range(1, max_trees + 1):
        resid = ts.y - fit_pred
        tree = _grow(ts.X, resid, rows, int(depth), int(min_leaf), 0, np.uint64(0))
        forest.add(tree)
        one = {
            "feat": tree[0], "thr": tree[1], "left": tree[2], "right": tree[3], "value": tree[4],
            "offsets": np.array([0, tree[0].size], np.int64),
        }
        fit_pred = fit_pred + learning_rate * _tree_predict(one, ts.X, [1.0])
        val_pred = val_pred + learning_rate * _tree_predict(one, validation.X, [1.0])
        train_mse.append(float(np.mean((ts.y - fit_pred) ** 2)))
        mse = float(np.mean((validation.y - val_pred) ** 2))
        if mse < best_mse:
            best_mse, best_k = mse, k
        elif k - best_k >= patience:
            break
    forest.parts = forest.parts[:best_k]
    params = forest.arrays()
    params["init"] = init
    hyper = {"max_trees": max_trees, "depth": depth, "learning_rate": learning_rate, "patience": patience}
    return FittedModel(
        "gboost", params, hyper, None, ts.p,
        {"n_trees": best_k, "best_validation_mse": best_mse, "train_mse_path": train_mse},
    )


def tree_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent per-tree seed sequences spawned from one master seed."""
    return np.random.SeedSequence(seed).spawn(n)


def fit_rforest(
    ts: TrainingSet,
    n_trees: int = 200,
    depth: int = 10,
    mtry: int | None = None,
    seed: int = 0,
    min_leaf: int = 5,
    bootstrap: bool = True,
) -> FittedModel:
    """Bagged trees with ``mtry`` random candidate features per split.

    Every tree draws its bootstrap sample and feature subsets from its own
    counter-based stream spawned from ``seed``, so results do not depend on
    the order in which trees are grown.
    """
    if n_trees < 1:
        raise LearnerError("a forest needs at least one tree")
    if mtry is None:
        mtry = int(np.ceil(np.sqrt(ts.p)))
    forest = _Forest()
    for ss in tree_seeds(seed, n_trees):
        gen = np.random.Generator(np.random.Philox(ss))
        if bootstrap:
            rows = np.sort(gen.integers(0, ts.n, size=ts.n)).astype(np.int64)
        else:
            rows = np.arange(ts.n, dtype=np.int64)
        state = np.uint64(int(gen.integers(0, 2**63)))
        forest.add(_grow(ts.X, ts.y, rows, int(depth), int(min_leaf), int(mtry), state))
    hyper = {"n_trees": n_trees, "depth": depth, "mtry": mtry, "min_leaf": min_leaf, "bootstrap": bootstrap}
    return FittedModel("rforest", forest.arrays(), hyper, seed, ts.p)
