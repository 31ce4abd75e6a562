"""Classifiers that produce the prediction scores, plus splits and AUC.

The confounder never enters a model: every function here takes a feature
matrix and labels only.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._rng import rng_for
from .errors import SpecificationError, StratificationError, UndefinedAUCError

CLASSIFIERS = ("logistic", "forest")


# --------------------------------------------------------------------------
# Splits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    n_splits: int = 30
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.n_splits, int) and self.n_splits >= 1):
            raise SpecificationError(f"n_splits must be an integer >= 1, got {self.n_splits!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise SpecificationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise SpecificationError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {"n_splits": self.n_splits, "train_fraction": self.train_fraction, "seed": self.seed}


def _allocate(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``counts * total / counts.sum()``."""
    exact = counts * (total / counts.sum())
    out = np.floor(exact).astype(int)
    short = total - out.sum()
    order = np.argsort(-(exact - out), kind="stable")
    out[order[:short]] += 1
    return np.clip(out, 1, counts - 1)


def make_splits(y, plan: SplitPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    """Label-stratified random train/test splits.

    The train size is ``round(train_fraction * n)``, distributed over the
    classes by largest remainders; every class keeps at least one member on
    each side.  Split ``s`` draws from its own RNG stream, so split ``s`` is
    the same whatever ``n_splits`` is.
    """
    y = np.asarray(y).reshape(-1)
    n = y.size
    if n < 10:
        raise SpecificationError(f"need n >= 10 samples to split, got {n}")
    classes, codes, counts = np.unique(y, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise StratificationError("labels contain a single class")
    if counts.min() < 2:
        raise StratificationError(f"class {classes[np.argmin(counts)]!r} has fewer than 2 members")
    n_train = _allocate(counts, int(round(plan.train_fraction * n)))
    members = [np.flatnonzero(codes == k) for k in range(classes.size)]
    out = []
    for s in range(plan.n_splits):
        rng = rng_for(plan.seed, s)
        train, test = [], []
        for idx, k in zip(members, n_train):
            perm = rng.permutation(idx)
            train.append(perm[:k])
            test.append(perm[k:])
        out.append((np.sort(np.concatenate(train)), np.sort(np.concatenate(test))))
    return out


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A fitted classifier.

    ``params`` holds ``coef`` / ``intercept`` / ``center`` / ``scale`` for a
    logistic model and ``trees`` for a forest.  ``info`` carries fitting
    diagnostics such as ``converged`` and ``iterations``.
    """

    kind: str
    d: int
    params: dict
    info: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.info.get("converged", True))


def _check_training(x, y):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise SpecificationError("x must be (n, d) with one label per row")
    if not np.all((y == 0) | (y == 1)):
        raise SpecificationError("labels must be 0/1")
    n1 = int(np.sum(y == 1))
    if min(n1, y.size - n1) < 2:
        raise StratificationError("training needs at least 2 samples of each class")
    if not np.all(np.isfinite(x)):
        raise SpecificationError("x contains non-finite values")
    return x, y.astype(float)


def _sigmoid(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _penalized_loglik(beta, X, y, w, ridge):
    eta = X @ beta
    ll = w @ (y * eta - np.logaddexp(0.0, eta))
    return ll - 0.5 * ridge * beta[1:] @ beta[1:]


def train_logistic(x_tr, y_tr, weights=None, *, ridge: float = 1e-6, tol: float = 1e-8, max_iter: int = 500) -> TrainedModel:
    """Ridge-stabilized maximum-likelihood logistic regression.

    Features are standardized internally.  Newton steps are halved until the
    penalized log-likelihood does not decrease; iteration stops when the
    largest parameter change is below ``tol`` or after ``max_iter`` steps,
    and ``info["converged"]`` records which.  ``weights`` (optional) are
    per-sample likelihood weights.
    """
    x, y = _check_training(x_tr, y_tr)
    n, d = x.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.any(w > 0):
        raise SpecificationError("weights must be non-negative with one entry per row")
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    X = np.column_stack([np.ones(n), (x - center) / scale])
    penalty = np.full(d + 1, ridge)
    penalty[0] = 0.0
    beta = np.zeros(d + 1)
    ll = _penalized_loglik(beta, X, y, w, ridge)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(X @ beta)
        grad = X.T @ (w * (y - p)) - penalty * beta
        H = X.T @ (X * (w * p * (1.0 - p))[:, None]) + np.diag(penalty + 1e-12)
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _penalized_loglik(cand, X, y, w, ridge)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        change = np.max(np.abs(cand - beta))
        beta, ll = cand, ll_new
        if change < tol:
            converged = True
            break
    coef = beta[1:] / scale
    return TrainedModel(
        kind="logistic",
        d=d,
        params={"coef": coef, "intercept": float(beta[0] - coef @ center)},
        info={"converged": converged, "iterations": it},
    )


# CART trees are stored as parallel arrays; leaves have feature == -1.
@dataclass(frozen=True, eq=False)
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    vote: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.intp)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = x[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return self.vote[node]


def _best_split(xs: np.ndarray, ys: np.ndarray, min_leaf: int):
    """Best Gini threshold for one feature; returns (impurity_sum, threshold) or None."""
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    m = xs.size
    pos = np.cumsum(ys)[:-1]
    nl = np.arange(1, m, dtype=float)
    nr = m - nl
    pr = ys.sum() - pos
    # n * weighted Gini = nl (1 - (pl/nl)^2 - ...), for binary: 2 * p (1 - p) * size
    cost = 2.0 * (pos * (nl - pos) / nl + pr * (nr - pr) / nr)
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        valid &= (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    cost = np.where(valid, cost, np.inf)
    k = int(np.argmin(cost))
    return cost[k], 0.5 * (xs[k] + xs[k + 1])


def _grow_tree(x, y, rng, mtry, min_node_size) -> _Tree:
    feature, threshold, left, right, vote = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        vote.append(0.0)
        return len(feature) - 1

    n, d = x.shape
    boot = rng.integers(0, n, size=n)
    stack = [(new_node(), boot)]
    while stack:
        node, idx = stack.pop()
        ys = y[idx]
        pos = ys.sum()
        frac = pos / idx.size
        vote[node] = 1.0 if frac > 0.5 else (0.0 if frac < 0.5 else 0.5)
        if idx.size < min_node_size or pos == 0 or pos == idx.size:
            continue
        parent = 2.0 * pos * (idx.size - pos) / idx.size
        best = None
        for j in rng.choice(d, size=mtry, replace=False):
            res = _best_split(x[idx, j], ys, 1)
            if res is not None and res[0] < parent - 1e-12 and (best is None or res[0] < best[0]):
                best = (res[0], int(j), res[1])
        if best is None:
            continue
        _, j, thr = best
        go_left = x[idx, j] <= thr
        li, ri = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = j, thr, li, ri
        stack.append((ri, idx[~go_left]))
        stack.append((li, idx[go_left]))
    return _Tree(
        np.array(feature, dtype=np.intp),
        np.array(threshold),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(vote),
    )


def train_forest(
    x_tr,
    y_tr,
    trees: int = 500,
    mtry: int = 7,
    seed: int = 0,
    *,
    min_node_size: int = 5,
    threads: int = 1,
) -> TrainedModel:
    """Bagged CART ensemble with Gini splits and random feature subsets.

    Each tree is grown on a bootstrap sample; at every node ``mtry``
    features are drawn without replacement and the best Gini threshold among
    them is used.  Nodes with fewer than ``min_node_size`` samples, or a
    single class, become leaves.  A leaf votes for its majority class (a
    tied leaf casts half a vote).  Tree ``t`` uses RNG stream ``t``.
    """
    x, y = _check_training(x_tr, y_tr)
    d = x.shape[1]
    if trees < 1:
        raise SpecificationError("trees must be >= 1")
    if not 1 <= mtry <= d:
        raise SpecificationError(f"mtry must lie in [1, d={d}], got {mtry}")

    def grow(t):
        return _grow_tree(x, y, rng_for(seed, t), mtry, min_node_size)

    if threads > 1 and trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ensemble = list(pool.map(grow, range(trees)))
    else:
        ensemble = [grow(t) for t in range(trees)]
    return TrainedModel(
        kind="forest",
        d=d,
        params={"trees": ensemble},
        info={"trees": trees, "mtry": mtry, "min_node_size": min_node_size, "seed": seed},
    )


def predict_scores(m: TrainedModel, x_ts) -> np.ndarray:
    """Positive-class scores in ``[0, 1]``."""
    x = np.asarray(x_ts, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != m.d:
        raise SpecificationError(f"model expects {m.d} features, got array of shape {x.shape}")
    if m.kind == "logistic":
        return _sigmoid(x @ m.params["coef"] + m.params["intercept"])
    if m.kind == "forest":
        total = np.zeros(x.shape[0])
        for tree in m.params["trees"]:
            total += tree.predict(x)
        return total / len(m.params["trees"])
    raise SpecificationError(f"unknown model kind {m.kind!r}")


def train(kind: str, x_tr, y_tr, seed: int = 0, *, weights=None, trees: int = 500, mtry: int | None = None, threads: int = 1) -> TrainedModel:
    """Dispatch on ``kind``; a forest's ``mtry`` defaults to ``min(7, d)``."""
    if kind == "logistic":
        return train_logistic(x_tr, y_tr, weights)
    if kind == "forest":
        if weights is not None:
            raise SpecificationError("the forest does not take sample weights")
        d = np.asarray(x_tr).reshape(len(y_tr), -1).shape[1]
        return train_forest(x_tr, y_tr, trees, min(7, d) if mtry is None else mtry, seed, threads=threads)
    raise SpecificationError(f"unknown classifier {kind!r}; expected logistic or forest")


def auc(scores, y_ts) -> float:
    """Mann-Whitney AUC; tied case/control pairs count one half."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(y_ts).reshape(-1)
    if s.shape != y.shape:
        raise SpecificationError("scores and labels differ in length")
    n1 = int(np.sum(y == 1))
    n0 = int(np.sum(y == 0))
    if n1 + n0 != y.size:
        raise SpecificationError("labels must be 0/1")
    if n1 == 0 or n0 == 0:
        raise UndefinedAUCError("AUC needs both classes in the test labels")
    r = rankdata(s)
    u = math.fsum(r[y == 1]) - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


__all__ = [
    "CLASSIFIERS",
    "SplitPlan",
    "TrainedModel",
    "auc",
    "make_splits",
    "predict_scores",
    "train",
    "train_forest",
    "train_logistic",
]
