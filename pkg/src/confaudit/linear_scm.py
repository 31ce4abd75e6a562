"""Linear structural causal model with a binary confounder.

The generating model is the three-node graph ``A -> Y``, ``A -> X``,
``Y -> X``::

    A ~ Bernoulli(p)
    Y = beta_ya * A + U_Y,                U_Y ~ N(0, sigma2_y)
    X = beta_xy * Y + beta_xa * A + U_X,  U_X ~ N(0, sigma2_x)

``path_coefficients`` gives the population (standardized) path coefficients;
sample estimates live in :mod:`confaudit.assoc_stats`.  The three presets
``a``, ``b``, ``c`` are the configurations with no label-to-feature effect,
all effects present, and no confounder-to-feature effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import rng_for
from .dataset import Dataset
from .errors import DegenerateColumnError, SpecificationError

# RNG streams for the three independent draws of one simulation.
_STREAM_A, _STREAM_UY, _STREAM_UX = 0, 1, 2


@dataclass(frozen=True)
class ScmSpec:
    beta_ya: float
    beta_xa: float
    beta_xy: float
    sigma2_y: float = 1.0
    sigma2_x: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        for name in ("beta_ya", "beta_xa", "beta_xy", "sigma2_y", "sigma2_x", "p"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise SpecificationError(f"{name} must be a finite real, got {v!r}")
        if self.sigma2_y <= 0:
            raise SpecificationError(f"sigma2_y must be > 0, got {self.sigma2_y}")
        if self.sigma2_x <= 0:
            raise SpecificationError(f"sigma2_x must be > 0, got {self.sigma2_x}")
        if not 0 < self.p < 1:
            raise SpecificationError(f"p must lie in (0, 1), got {self.p}")

    def to_dict(self) -> dict:
        return {
            "beta_ya": self.beta_ya,
            "beta_xa": self.beta_xa,
            "beta_xy": self.beta_xy,
            "sigma2_y": self.sigma2_y,
            "sigma2_x": self.sigma2_x,
            "p": self.p,
        }


PRESETS: dict[str, ScmSpec] = {
    "a": ScmSpec(beta_ya=0.75, beta_xa=0.75, beta_xy=0.0),
    "b": ScmSpec(beta_ya=0.75, beta_xa=0.75, beta_xy=0.75),
    "c": ScmSpec(beta_ya=0.75, beta_xa=0.0, beta_xy=0.75),
}


def preset(name: str) -> ScmSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise SpecificationError(f"unknown preset {name!r}; expected one of a, b, c") from None


@dataclass(frozen=True)
class PathModel:
    theta_ya: float
    theta_xa: float
    theta_xy: float
    var_a: float
    var_y: float
    var_x: float


def _draws(spec: ScmSpec, n: int, seed: int):
    if not isinstance(spec, ScmSpec):
        raise SpecificationError("spec must be an ScmSpec")
    if n < 2:
        raise SpecificationError(f"n must be >= 2, got {n}")
    a = (rng_for(seed, _STREAM_A).random(n) < spec.p).astype(float)
    u_y = rng_for(seed, _STREAM_UY).normal(0.0, math.sqrt(spec.sigma2_y), n)
    u_x = rng_for(seed, _STREAM_UX).normal(0.0, math.sqrt(spec.sigma2_x), n)
    return a, u_y, u_x


def simulate(spec: ScmSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` samples with a continuous response and one feature."""
    a, u_y, u_x = _draws(spec, n, seed)
    y = spec.beta_ya * a + u_y
    x = spec.beta_xy * y + spec.beta_xa * a + u_x
    return Dataset(x[:, None], y, a)


def simulate_binary(spec: ScmSpec, n: int, seed: int) -> Dataset:
    """As :func:`simulate`, but the response is split at its sample median.

    Values equal to the median go to class 0.  The feature is then generated
    from the binary label, so ``beta_xy`` is the effect of class membership.
    """
    a, u_y, u_x = _draws(spec, n, seed)
    y_cont = spec.beta_ya * a + u_y
    y = (y_cont > np.median(y_cont)).astype(np.int64)
    x = spec.beta_xy * y + spec.beta_xa * a + u_x
    return Dataset(x[:, None], y, a)


def path_coefficients(spec: ScmSpec) -> PathModel:
    """Population variances and standardized path coefficients.

    ``Var(X)`` includes the cross term ``2 beta_xa beta_xy Cov(A, Y)``.
    """
    var_a = spec.p * (1.0 - spec.p)
    var_y = spec.sigma2_y + spec.beta_ya**2 * var_a
    cov_ya = spec.beta_ya * var_a
    var_x = (
        spec.sigma2_x
        + spec.beta_xa**2 * var_a
        + spec.beta_xy**2 * var_y
        + 2.0 * spec.beta_xa * spec.beta_xy * cov_ya
    )
    return PathModel(
        theta_ya=spec.beta_ya * math.sqrt(var_a / var_y),
        theta_xa=spec.beta_xa * math.sqrt(var_a / var_x),
        theta_xy=spec.beta_xy * math.sqrt(var_y / var_x),
        var_a=var_a,
        var_y=var_y,
        var_x=var_x,
    )


_PAIRS = {
    frozenset("XY"): lambda m: m.theta_xy + m.theta_xa * m.theta_ya,
    frozenset("XA"): lambda m: m.theta_xa + m.theta_xy * m.theta_ya,
    frozenset("AY"): lambda m: m.theta_ya,
}


def wright_covariance(model: PathModel, pair) -> float:
    """Covariance of two standardized variables as a sum over open paths.

    ``pair`` is any two of ``"X"``, ``"Y"``, ``"A"``, e.g. ``("X", "Y")`` or
    ``"XA"``; order does not matter.
    """
    key = frozenset(str(v).upper() for v in pair)
    if len(key) != 2 or key not in _PAIRS:
        raise SpecificationError(f"unknown variable pair {pair!r}; use two of X, Y, A")
    return _PAIRS[key](model)


def _zscore(v: np.ndarray, name: str) -> np.ndarray:
    sd = np.std(v, ddof=1)
    if not sd > 0:
        raise DegenerateColumnError(name)
    return (v - np.mean(v)) / sd


def standardize(data: Dataset, response: bool | None = None) -> Dataset:
    """Center and scale features, confounder and (if continuous) the response.

    Binary labels are kept as 0/1 unless ``response=True`` is passed, in
    which case ``y`` is standardized as well and the result carries a
    continuous response.
    """
    if response is None:
        response = not data.is_binary
    x = np.column_stack([_zscore(data.x[:, j], f"x{j + 1}") for j in range(data.d)])
    a = _zscore(data.a, "a")
    y = _zscore(data.y.astype(float), "y") if response else data.y
    return Dataset(x, y, a, weights=data.weights, ids=data.ids)
