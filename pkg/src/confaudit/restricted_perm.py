"""Restricted permutation of labels within confounder levels.

Shuffling ``y`` only within the levels of a discrete confounder ``a`` keeps
the ``a``-``y`` and ``a``-``x`` associations intact and destroys only the part
of the ``x``-``y`` association not carried by ``a``.  The mean of the
resulting null distribution of ``Cov(x, y*)`` is known in closed form::

    E[Cov(x, y*)] = Cov(x, a) Cov(y, a) / Var(a) = Cov(x, y) - Cov(x, y | a)

and for the linear SCM it splits into a confounder-only part and a bias
term (see :func:`bias_decomposition`).  Levels are formed by exact value
equality; discretize continuous confounders first (``adjust.stratify``).

In general the null mean is the between-level covariance
``sum_l n_l (xbar_l - xbar)(ybar_l - ybar) / (n - 1)``; the closed form above
equals it exactly when ``a`` has two levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._levels import level_codes, level_groups, permutation_chunks
from ._rng import rng_for
from .assoc_stats import covariance, variance
from .errors import DegenerateConfounderError, SpecificationError
from .linear_scm import PathModel


@dataclass(frozen=True, eq=False)
class RestrictedPermNull:
    """Null distribution of ``Cov(x, y*)`` and its closed-form reference values.

    ``analytic_mean`` is the location predicted for the null; ``confounder_only``
    is the part of ``Cov(x, y)`` carried by the backdoor path through ``a``
    (``gamma_xa * Cov(y, a)`` with ``gamma_xa`` the coefficient of ``a`` in the
    least-squares fit of ``x`` on ``(y, a)``; on standardized data this is
    ``theta_xa * theta_ya``).  ``bias`` is their difference.
    """

    stats: np.ndarray
    observed: float
    analytic_mean: float
    confounder_only: float

    @property
    def B(self) -> int:
        return int(self.stats.size)

    @property
    def bias(self) -> float:
        return self.analytic_mean - self.confounder_only

    @property
    def perm_mean(self) -> float:
        return float(math.fsum(self.stats) / self.stats.size)

    @property
    def perm_sd(self) -> float:
        return float(np.std(self.stats, ddof=1)) if self.stats.size > 1 else 0.0


def _vectors(*cols):
    out = [np.asarray(c, dtype=float) for c in cols]
    n = out[0].shape
    if any(v.ndim != 1 or v.shape != n for v in out):
        raise SpecificationError("x, y and a must be 1-d vectors of equal length")
    return out


def restricted_shuffle(y, a, seed: int) -> np.ndarray:
    """Return ``y`` with entries permuted uniformly within each level of ``a``."""
    y, a = _vectors(y, a)
    if y.size == 0:
        raise SpecificationError("empty input")
    rng = rng_for(seed)
    out = y.copy()
    for g in level_groups(level_codes(a)):
        out[g] = y[rng.permutation(g)]
    return out


def analytic_null_mean(x, y, a) -> float:
    x, y, a = _vectors(x, y, a)
    va = variance(a)
    if not va > 0:
        raise DegenerateConfounderError()
    return covariance(x, a) * covariance(y, a) / va


def confounder_only_estimate(x, y, a) -> float:
    x, y, a = _vectors(x, y, a)
    if not variance(a) > 0:
        raise DegenerateConfounderError()
    design = np.column_stack([np.ones_like(x), y, a])
    coef, *_ = np.linalg.lstsq(design, x, rcond=None)
    return float(coef[2]) * covariance(y, a)


def _perm_covariances(x, y, codes, B, seed):
    n = x.size
    xc = (x - x.mean()) / (n - 1)
    ybar = y.mean()
    out = np.empty(B)
    pos = 0
    for idx in permutation_chunks(n, codes, B, seed):
        out[pos : pos + idx.shape[0]] = (y[idx] - ybar) @ xc
        pos += idx.shape[0]
    return out


def perm_null_covariance(x, y, a, B: int = 5000, seed: int = 0) -> RestrictedPermNull:
    """Sample ``B`` restricted permutations and collect ``Cov(x, y*)``.

    Permutations are drawn in chunks with one derived RNG stream per chunk.
    """
    x, y, a = _vectors(x, y, a)
    if B < 1:
        raise SpecificationError(f"B must be >= 1, got {B}")
    analytic = analytic_null_mean(x, y, a)
    stats = _perm_covariances(x, y, level_codes(a), B, seed)
    return RestrictedPermNull(
        stats=stats,
        observed=covariance(x, y),
        analytic_mean=analytic,
        confounder_only=confounder_only_estimate(x, y, a),
    )


def bias_decomposition(model: PathModel) -> tuple[float, float, float]:
    """Population ``(analytic_mean, confounder_only, bias)`` from path coefficients.

    ``analytic_mean = theta_xa theta_ya + theta_xy theta_ya**2``; the first
    term is the confounder-only association and the second is the bias.
    """
    confounder_only = model.theta_xa * model.theta_ya
    bias = model.theta_xy * model.theta_ya**2
    return confounder_only + bias, confounder_only, bias


def _within_level_cov(x, ystar_rows, groups, n):
    total = np.zeros(ystar_rows.shape[0])
    for g in groups:
        m = g.size
        if m < 2:
            continue
        xc = x[g] - x[g].mean()
        ys = ystar_rows[:, g]
        cov = (ys - ys.mean(axis=1, keepdims=True)) @ xc / (m - 1)
        total += (m / n) * cov
    return total


def within_level_null_check(x, y, a, B: int = 2000, seed: int = 0, return_stats: bool = False):
    """Mean over shuffles of the level-size-weighted within-level covariance.

    Each shuffle contributes ``sum_l (n_l / n) Cov(x, y* | a = l)``; levels with
    a single member contribute 0.  The returned grand mean tends to 0 as
    ``B`` grows.  With ``return_stats=True`` the per-shuffle values are
    returned as well.
    """
    x, y, a = _vectors(x, y, a)
    if not variance(a) > 0:
        raise DegenerateConfounderError()
    codes = level_codes(a)
    groups = level_groups(codes)
    n = x.size
    per_shuffle = np.empty(B)
    pos = 0
    for idx in permutation_chunks(n, codes, B, seed):
        c = idx.shape[0]
        per_shuffle[pos : pos + c] = _within_level_cov(x, y[idx], groups, n)
        pos += c
    mean = float(math.fsum(per_shuffle) / B)
    return (mean, per_shuffle) if return_stats else mean


__all__ = [
    "RestrictedPermNull",
    "analytic_null_mean",
    "bias_decomposition",
    "confounder_only_estimate",
    "perm_null_covariance",
    "restricted_shuffle",
    "within_level_null_check",
]
