"""Confounding adjustments and the confounder/label balance report.

Three methods decouple the label from the confounder before a classifier is
trained:

* ``matching``: within each confounder stratum keep equally many cases and
  controls (random down-sampling of the majority class);
* ``ipw``: logistic propensity ``P(Y=1 | a)``, inverse-probability weights,
  and by default a weighted resample to an unweighted pseudo-population;
* ``residualize``: subtract from every feature its least-squares line in
  ``a`` fitted on the training data.

None of them changes any label value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._levels import level_groups, stratify
from ._rng import child_seed, rng_for
from .assoc_stats import spearman, variance
from .dataset import Dataset
from .errors import DegenerateConfounderError, EmptyResultError, SpecificationError

ADJUSTMENTS = ("none", "matching", "ipw", "residualize")
IPW_MODES = ("resample", "weight")
PROPENSITY_CLIP = (0.01, 0.99)


@dataclass(frozen=True)
class AdjustmentSpec:
    """Which adjustment to apply.

    ``strata`` is the number of quantile bins used when the confounder has
    more distinct values than that.  ``ipw_mode`` selects weighted resampling
    (default) or passing the weights to the classifier.  With
    ``residualize_on_label`` the residualizer regresses each feature on
    ``(a, y)`` and removes only the ``a`` term.
    """

    method: str = "none"
    strata: int = 10
    seed: int = 0
    ipw_mode: str = "resample"
    residualize_on_label: bool = False

    def __post_init__(self):
        if self.method not in ADJUSTMENTS:
            raise SpecificationError(f"unknown adjustment {self.method!r}; expected one of {', '.join(ADJUSTMENTS)}")
        if self.strata < 2:
            raise SpecificationError(f"strata must be >= 2, got {self.strata}")
        if self.ipw_mode not in IPW_MODES:
            raise SpecificationError(f"unknown ipw_mode {self.ipw_mode!r}")
        if self.seed < 0:
            raise SpecificationError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "strata": self.strata,
            "seed": self.seed,
            "ipw_mode": self.ipw_mode,
            "residualize_on_label": self.residualize_on_label,
        }


# --------------------------------------------------------------------------
# Matching
# --------------------------------------------------------------------------


def match_samples(d: Dataset, strata: int = 10, seed: int = 0) -> Dataset:
    """Equalize case and control counts inside each confounder stratum.

    Strata lacking either class are dropped.  Kept rows appear in their
    original order.
    """
    d.require_binary()
    codes = stratify(d.a, strata)
    rng = rng_for(seed)
    keep = []
    for g in level_groups(codes):
        cases = g[d.y[g] == 1]
        controls = g[d.y[g] == 0]
        k = min(cases.size, controls.size)
        if k == 0:
            continue
        keep.append(cases if cases.size == k else rng.choice(cases, k, replace=False))
        keep.append(controls if controls.size == k else rng.choice(controls, k, replace=False))
    if not keep:
        raise EmptyResultError("matching: no confounder stratum contains both classes")
    return d.subset(np.sort(np.concatenate(keep)))


# --------------------------------------------------------------------------
# Propensity scores and IPW
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PropensityFit:
    intercept: float
    slope: float
    separated: bool
    converged: bool

    def predict(self, a) -> np.ndarray:
        eta = self.intercept + self.slope * np.asarray(a, dtype=float)
        return np.clip(_sigmoid(eta), *PROPENSITY_CLIP)


def _sigmoid(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _is_separated(a, y) -> bool:
    cases, controls = a[y == 1], a[y == 0]
    return bool(cases.min() >= controls.max() or cases.max() <= controls.min())


def fit_propensity(d: Dataset, max_iter: int = 100, tol: float = 1e-10) -> PropensityFit:
    """Logistic regression of ``y`` on ``(1, a)`` by Newton's method.

    Under complete or quasi-complete separation the likelihood has no
    finite maximizer; iterations stop at ``max_iter`` with ``separated`` set,
    and the clipped scores sit at the clip bounds.
    """
    d.require_binary()
    a = d.a
    y = d.y.astype(float)
    if not variance(a) > 0:
        raise DegenerateConfounderError()
    if y.min() == y.max():
        raise SpecificationError("propensity model needs both classes")
    # Work on a standardized confounder for conditioning, map back at the end.
    mu, sd = a.mean(), a.std()
    z = (a - mu) / sd
    X = np.column_stack([np.ones_like(z), z])
    beta = np.zeros(2)
    separated = _is_separated(a, d.y)
    converged = False
    for _ in range(max_iter):
        p = _sigmoid(X @ beta)
        w = p * (1.0 - p)
        H = X.T @ (X * w[:, None]) + 1e-12 * np.eye(2)
        step = np.linalg.solve(H, X.T @ (y - p))
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
        if np.max(np.abs(beta)) > 50:
            break
    slope = beta[1] / sd
    return PropensityFit(float(beta[0] - slope * mu), float(slope), separated, converged and not separated)


def propensity_scores(d: Dataset) -> np.ndarray:
    """Fitted ``P(Y=1 | a_i)``, clipped to ``[0.01, 0.99]``."""
    return fit_propensity(d).predict(d.a)


def ipw_weights(d: Dataset) -> Dataset:
    """Attach ``1/p`` (cases) and ``1/(1-p)`` (controls) weights scaled to mean 1."""
    p = propensity_scores(d)
    w = np.where(d.y == 1, 1.0 / p, 1.0 / (1.0 - p))
    return d.with_weights(w / w.mean())


def ipw_resample(d: Dataset, seed: int = 0) -> Dataset:
    """Draw ``n`` rows with replacement, probabilities proportional to the weights."""
    if d.weights is None:
        raise SpecificationError("ipw_resample needs a weighted dataset (see ipw_weights)")
    prob = d.weights / d.weights.sum()
    idx = np.sort(rng_for(seed).choice(d.n, size=d.n, replace=True, p=prob))
    out = d.subset(idx)
    return Dataset(out.x, out.y, out.a, ids=out.ids)


# --------------------------------------------------------------------------
# Residualization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualizerModel:
    """Per-feature ``intercept + slope * a`` lines, fit on training data."""

    intercept: np.ndarray
    slope: np.ndarray

    @property
    def d(self) -> int:
        return self.intercept.size


def fit_residualizer(d_train: Dataset, on_label: bool = False) -> ResidualizerModel:
    """Least-squares line of each feature on ``a``.

    With ``on_label=True`` each feature is regressed on ``(1, a, y)`` instead
    and only the confounder slope is kept (the intercept absorbs the label
    term's training mean), so the label-driven part of the feature survives.
    """
    a = d_train.a
    va = variance(a)
    if not va > 0:
        raise DegenerateConfounderError()
    if not on_label:
        ac = a - a.mean()
        slope = (ac @ (d_train.x - d_train.x.mean(axis=0))) / (ac @ ac)
        intercept = d_train.x.mean(axis=0) - slope * a.mean()
        return ResidualizerModel(intercept, slope)
    y = d_train.y.astype(float)
    design = np.column_stack([np.ones_like(a), a, y])
    coef, *_ = np.linalg.lstsq(design, d_train.x, rcond=None)
    slope = coef[1]
    intercept = d_train.x.mean(axis=0) - slope * a.mean()
    return ResidualizerModel(intercept, slope)


def apply_residualizer(m: ResidualizerModel, d: Dataset) -> Dataset:
    if d.d != m.d:
        raise SpecificationError(f"residualizer fit on {m.d} features, data has {d.d}")
    return d.with_x(d.x - (m.intercept + np.outer(d.a, m.slope)))


# --------------------------------------------------------------------------
# Balance report
# --------------------------------------------------------------------------


def _weighted_summary(a, w):
    w = w / w.sum()
    mean = float(w @ a)
    var = float(w @ (a - mean) ** 2)
    order = np.argsort(a, kind="stable")
    cdf = np.cumsum(w[order])
    q = [float(a[order][min(np.searchsorted(cdf, t - 1e-12), a.size - 1)]) for t in (0.25, 0.5, 0.75)]
    return mean, var, q


def balance_report(d: Dataset, method: str = "none", n_before: int | None = None) -> dict:
    """Per-class confounder summaries, standardized mean difference, Spearman test.

    Weights, when present, enter the summaries and the SMD; the Spearman test
    is on the unweighted rows.
    """
    d.require_binary()
    w = np.ones(d.n) if d.weights is None else d.weights
    per_class = {}
    moments = {}
    for cls in (0, 1):
        mask = d.y == cls
        if not mask.any():
            raise EmptyResultError(f"class {cls} is empty")
        mean, var, q = _weighted_summary(d.a[mask], w[mask])
        moments[cls] = (mean, var)
        per_class[str(cls)] = {
            "n": int(mask.sum()),
            "mean": mean,
            "sd": math.sqrt(var),
            "q25": q[0],
            "median": q[1],
            "q75": q[2],
        }
    pooled = math.sqrt(0.5 * (moments[0][1] + moments[1][1]))
    diff = moments[1][0] - moments[0][0]
    smd = diff / pooled if pooled > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
    if variance(d.a) > 0:
        test = spearman(d.a, d.y)
        stat, p = test.statistic, test.p_value
    else:
        stat, p = 0.0, 1.0
    return {
        "method": method,
        "n_before": int(d.n if n_before is None else n_before),
        "n_after": int(d.n),
        "smd": smd,
        "spearman_stat": stat,
        "spearman_p": p,
        "per_class": per_class,
    }


def adjust_pair(train: Dataset, test: Dataset, spec: AdjustmentSpec, seed: int | None = None):
    """Apply ``spec`` to a train/test pair.

    Matching and IPW run independently on each side (seed streams 0 and 1);
    the residualizer is fit on ``train`` and applied to both.
    """
    seed = spec.seed if seed is None else seed
    if spec.method == "none":
        return train, test
    if spec.method == "matching":
        return (
            match_samples(train, spec.strata, _side_seed(seed, 0)),
            match_samples(test, spec.strata, _side_seed(seed, 1)),
        )
    if spec.method == "ipw":
        tr, ts = ipw_weights(train), ipw_weights(test)
        ts = ipw_resample(ts, _side_seed(seed, 1))
        if spec.ipw_mode == "resample":
            tr = ipw_resample(tr, _side_seed(seed, 0))
        return tr, ts
    model = fit_residualizer(train, on_label=spec.residualize_on_label)
    return apply_residualizer(model, train), apply_residualizer(model, test)


def _side_seed(seed: int, side: int) -> int:
    return child_seed(seed, side)


__all__ = [
    "ADJUSTMENTS",
    "AdjustmentSpec",
    "PropensityFit",
    "ResidualizerModel",
    "adjust_pair",
    "apply_residualizer",
    "balance_report",
    "fit_propensity",
    "fit_residualizer",
    "ipw_resample",
    "ipw_weights",
    "match_samples",
    "propensity_scores",
    "stratify",
]
