"""Marginal and partial association measures and their tests.

All covariances use the ``1/(n-1)`` estimator.  Ranks are mid-ranks.
Distances between scalars are absolute differences, which also covers
0/1-encoded binary variables.

Permutation p-values are ``(1 + #{T_b >= T_obs}) / (B + 1)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from ._levels import level_codes, permutation_chunks, stratify
from .errors import (
    CollinearityError,
    DegenerateColumnError,
    DegenerateConfounderError,
    SpecificationError,
)

METHODS = ("pearson", "spearman", "partial_spearman", "dcor_perm", "pdcor_perm")

# Above this size distance matrices need an explicit opt-in.
MAX_DISTANCE_N = 20000
_ROW_BLOCK = 1024
# Relative slack when comparing permuted statistics with the observed one,
# so that ties which differ only by rounding still count as ties.
_TIE_RTOL = 1e-12
# A conditioner with at most this many distinct values is treated as discrete.
DISCRETE_MAX_LEVELS = 10


class DegenerateWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    n: int
    B: int | None = None
    flags: tuple[str, ...] = field(default=())

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecificationError(f"unknown method {self.method!r}")
        if not 0.0 <= self.p_value <= 1.0:
            raise SpecificationError(f"p-value out of range: {self.p_value}")

    def to_dict(self) -> dict:
        out = {"method": self.method, "stat": self.statistic, "p": self.p_value, "n": self.n}
        if self.B is not None:
            out["B"] = self.B
        if self.flags:
            out["flags"] = list(self.flags)
        return out


def _vec(v, name="x") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise SpecificationError(f"{name} must be one-dimensional")
    return v


def _pair(x, y, names=("x", "y")):
    x, y = _vec(x, names[0]), _vec(y, names[1])
    if x.shape != y.shape:
        raise SpecificationError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def _is_constant(v: np.ndarray) -> bool:
    return bool(np.all(v == v[0]))


# --------------------------------------------------------------------------
# Moment-based measures
# --------------------------------------------------------------------------


def covariance(x, y) -> float:
    x, y = _pair(x, y)
    n = x.size
    if n < 2:
        raise SpecificationError("covariance needs n >= 2")
    return float(np.dot(x - x.mean(), y - y.mean()) / (n - 1))


def variance(x) -> float:
    return covariance(x, x)


def partial_covariance(x, y, a) -> float:
    """``Cov(x, y) - Cov(x, a) Var(a)^-1 Cov(y, a)`` from sample moments."""
    x, y = _pair(x, y)
    a = _vec(a, "a")
    if a.shape != x.shape:
        raise SpecificationError("length mismatch with a")
    va = variance(a)
    if not va > 0:
        raise DegenerateConfounderError()
    return covariance(x, y) - covariance(x, a) * covariance(y, a) / va


def _corr(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    return max(-1.0, min(1.0, r))


def _t_pvalue(r: float, df: int) -> float:
    if df <= 0:
        raise SpecificationError("not enough samples for the t approximation")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt(df / (1.0 - r * r))
    return float(min(1.0, 2.0 * sps.t.sf(abs(t), df)))


def _check_nonconstant(**cols):
    for name, v in cols.items():
        if _is_constant(v):
            raise DegenerateColumnError(name)


def pearson(x, y) -> TestResult:
    x, y = _pair(x, y)
    if x.size < 3:
        raise SpecificationError("pearson needs n >= 3")
    _check_nonconstant(x=x, y=y)
    r = _corr(x, y)
    return TestResult(r, _t_pvalue(r, x.size - 2), "pearson", x.size)


def ranks(v) -> np.ndarray:
    """Mid-ranks (ties share the average rank)."""
    return sps.rankdata(v, method="average")


def spearman(x, y, *, B: int = 9999, seed: int = 0, min_n_t: int = 30) -> TestResult:
    """Spearman rank correlation with a two-sided p-value.

    For ``n >= min_n_t`` the p-value uses ``t = r sqrt((n-2)/(1-r^2))`` on
    ``n - 2`` degrees of freedom; smaller samples use ``B`` random
    permutations of ``y`` instead.
    """
    x, y = _pair(x, y)
    n = x.size
    if n < 5:
        raise SpecificationError("spearman needs n >= 5")
    _check_nonconstant(x=x, y=y)
    rx, ry = ranks(x), ranks(y)
    r = _corr(rx, ry)
    if n >= min_n_t:
        return TestResult(r, _t_pvalue(r, n - 2), "spearman", n)
    rxc = rx - rx.mean()
    denom = math.sqrt(np.dot(rxc, rxc) * np.dot(ry - ry.mean(), ry - ry.mean()))
    obs = abs(r)
    hits = 0
    for idx in permutation_chunks(n, None, B, seed):
        rb = np.abs(ry[idx] @ rxc) / denom
        hits += int(np.count_nonzero(rb >= obs - _TIE_RTOL * max(1.0, obs)))
    return TestResult(r, (1 + hits) / (B + 1), "spearman", n, B=B, flags=("permutation_p",))


def partial_spearman(x, y, a) -> TestResult:
    """First-order partial correlation of the mid-ranks of ``x`` and ``y`` given ``a``.

    Two-sided p-value from the t distribution on ``n - 3`` degrees of freedom.
    """
    x, y = _pair(x, y)
    a = _vec(a, "a")
    if a.shape != x.shape:
        raise SpecificationError("length mismatch with a")
    n = x.size
    if n < 6:
        raise SpecificationError("partial_spearman needs n >= 6")
    _check_nonconstant(x=x, y=y, a=a)
    rx, ry, ra = ranks(x), ranks(y), ranks(a)
    r_xy, r_xa, r_ya = _corr(rx, ry), _corr(rx, ra), _corr(ry, ra)
    denom = (1.0 - r_xa**2) * (1.0 - r_ya**2)
    if denom <= 1e-14:
        raise CollinearityError("a is perfectly rank-correlated with x or y")
    r = (r_xy - r_xa * r_ya) / math.sqrt(denom)
    r = max(-1.0, min(1.0, r))
    return TestResult(r, _t_pvalue(r, n - 3), "partial_spearman", n)


# --------------------------------------------------------------------------
# Distance-based measures
# --------------------------------------------------------------------------


def _guard_size(n: int, allow_large: bool):
    if n > MAX_DISTANCE_N and not allow_large:
        raise SpecificationError(
            f"n = {n} exceeds {MAX_DISTANCE_N}; pass allow_large=True to build O(n^2) distance matrices"
        )


def distance_matrix(v) -> np.ndarray:
    v = _vec(v)
    return np.abs(v[:, None] - v[None, :])


def double_centered(d: np.ndarray) -> np.ndarray:
    row = d.mean(axis=1, keepdims=True)
    col = d.mean(axis=0, keepdims=True)
    return d - row - col + d.mean()


def u_centered(d: np.ndarray) -> np.ndarray:
    """U-centering: zero diagonal and zero off-diagonal row/column sums."""
    n = d.shape[0]
    if n < 4:
        raise SpecificationError("U-centering needs n >= 4")
    row = d.sum(axis=1, keepdims=True) / (n - 2)
    col = d.sum(axis=0, keepdims=True) / (n - 2)
    out = d - row - col + d.sum() / ((n - 1) * (n - 2))
    np.fill_diagonal(out, 0.0)
    return out


def u_inner(a: np.ndarray, b: np.ndarray) -> float:
    n = a.shape[0]
    return float(np.sum(a * b) / (n * (n - 3)))


def _dcov_v_terms(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """V-statistic dCov^2(x,y), dVar^2(x), dVar^2(y), accumulated by row blocks."""
    n = x.size
    ax_row = np.empty(n)
    by_row = np.empty(n)
    s_xy = s_xx = s_yy = 0.0
    for lo in range(0, n, _ROW_BLOCK):
        hi = min(n, lo + _ROW_BLOCK)
        da = np.abs(x[lo:hi, None] - x[None, :])
        db = np.abs(y[lo:hi, None] - y[None, :])
        ax_row[lo:hi] = da.mean(axis=1)
        by_row[lo:hi] = db.mean(axis=1)
        s_xy += float(np.sum(da * db))
        s_xx += float(np.sum(da * da))
        s_yy += float(np.sum(db * db))
    ax, by = ax_row.mean(), by_row.mean()
    n2 = n * n

    def term(s, r1, r2, m1, m2):
        return s / n2 - 2.0 * float(np.dot(r1, r2)) / n + m1 * m2

    return (
        term(s_xy, ax_row, by_row, ax, by),
        term(s_xx, ax_row, ax_row, ax, ax),
        term(s_yy, by_row, by_row, by, by),
    )


def distance_correlation(x, y, *, allow_large: bool = False) -> float:
    """Sample distance correlation (V-statistic form), in ``[0, 1]``.

    A constant input has a zero distance matrix; the result is then 0 and a
    :class:`DegenerateWarning` is emitted.
    """
    x, y = _pair(x, y)
    n = x.size
    if n < 4:
        raise SpecificationError("distance_correlation needs n >= 4")
    _guard_size(n, allow_large)
    if _is_constant(x) or _is_constant(y):
        warnings.warn("constant input: distance correlation set to 0", DegenerateWarning, stacklevel=2)
        return 0.0
    dcov2, dvx, dvy = _dcov_v_terms(x, y)
    r2 = max(0.0, dcov2) / math.sqrt(dvx * dvy)
    return float(min(1.0, math.sqrt(r2)))


def _bias_corrected_parts(x, y, a):
    ux, uy, ua = (u_centered(distance_matrix(v)) for v in (x, y, a))
    return ux, uy, ua


def _projection(u: np.ndarray, ua: np.ndarray, ua_norm2: float) -> np.ndarray:
    return u - (u_inner(u, ua) / ua_norm2) * ua


def partial_distance_correlation(x, y, a, *, allow_large: bool = False) -> float:
    """Partial distance correlation of ``x`` and ``y`` removing ``a``.

    ``(R_xy - R_xa R_ya) / sqrt((1 - R_xa^2)(1 - R_ya^2))`` where ``R`` are
    bias-corrected distance correlations built from U-centered distance
    matrices.
    """
    x, y = _pair(x, y)
    a = _vec(a, "a")
    if a.shape != x.shape:
        raise SpecificationError("length mismatch with a")
    if x.size < 4:
        raise SpecificationError("partial_distance_correlation needs n >= 4")
    _guard_size(x.size, allow_large)
    ux, uy, ua = _bias_corrected_parts(x, y, a)
    return _pdcor_from_u(ux, uy, ua)


def _pdcor_from_u(ux, uy, ua) -> float:
    nx, ny, na = u_inner(ux, ux), u_inner(uy, uy), u_inner(ua, ua)
    if nx <= 0 or ny <= 0 or na <= 0:
        raise CollinearityError("a U-centered distance matrix is zero (constant input)")
    r_xy = u_inner(ux, uy) / math.sqrt(nx * ny)
    r_xa = u_inner(ux, ua) / math.sqrt(nx * na)
    r_ya = u_inner(uy, ua) / math.sqrt(ny * na)
    denom = (1.0 - r_xa**2) * (1.0 - r_ya**2)
    if denom <= 1e-14:
        raise CollinearityError("conditioning variable is collinear with x or y in distance space")
    return float((r_xy - r_xa * r_ya) / math.sqrt(denom))


# --------------------------------------------------------------------------
# Permutation tests
# --------------------------------------------------------------------------


def _pvalue(hits: int, B: int) -> float:
    return (1 + hits) / (B + 1)


def _count_hits(tb: np.ndarray, obs: float) -> int:
    return int(np.count_nonzero(tb >= obs - _TIE_RTOL * max(1.0, abs(obs))))


def _nuisance_codes(nuisance, n):
    if nuisance is None:
        return None
    z = _vec(nuisance, "nuisance")
    if z.size != n:
        raise SpecificationError("length mismatch with nuisance")
    if np.unique(z).size <= DISCRETE_MAX_LEVELS:
        return level_codes(z)
    return stratify(z, DISCRETE_MAX_LEVELS)


def perm_pvalue(statistic_fn, x, y, nuisance=None, B: int = 999, seed: int = 0, *, method: str = "dcor_perm") -> TestResult:
    """Generic permutation test that permutes ``y``.

    ``statistic_fn(x, y)`` (or ``statistic_fn(x, y, nuisance)`` when a
    nuisance variable is given) returns a real; large values are evidence
    against the null.  With a nuisance variable ``y`` is permuted within its
    levels; a nuisance with more than ``DISCRETE_MAX_LEVELS`` distinct values
    is first cut into that many quantile strata.
    """
    x, y = _pair(x, y)
    if B < 99:
        raise SpecificationError(f"B must be >= 99, got {B}")
    codes = _nuisance_codes(nuisance, x.size)
    args = () if nuisance is None else (np.asarray(nuisance, dtype=float),)
    obs = float(statistic_fn(x, y, *args))
    hits = 0
    for idx in permutation_chunks(x.size, codes, B, seed):
        tb = np.array([statistic_fn(x, y[row], *args) for row in idx])
        hits += _count_hits(tb, obs)
    return TestResult(obs, _pvalue(hits, B), method, x.size, B=B)


def _two_valued(v: np.ndarray):
    """(indicator of the larger value, gap) if ``v`` takes exactly two values."""
    u = np.unique(v)
    if u.size != 2:
        return None
    return (v == u[1]).astype(float), float(u[1] - u[0])


def dcor_perm_test(x, y, B: int = 1000, seed: int = 0, *, allow_large: bool = False) -> TestResult:
    """Permutation test of independence based on distance correlation.

    The statistic is the V-statistic distance correlation.  Only the cross
    term changes under permutation.  When one variable takes two values its
    distance matrix is ``gap * |e_i - e_j|`` and the cross term reduces to the
    quadratic form ``-2 gap e' A e`` in the double-centered matrix ``A`` of
    the other variable, which is evaluated for a whole batch of permutations
    with one matrix product.
    """
    x, y = _pair(x, y)
    n = x.size
    if n < 4:
        raise SpecificationError("dcor_perm_test needs n >= 4")
    if B < 99:
        raise SpecificationError(f"B must be >= 99, got {B}")
    _guard_size(n, allow_large)
    if _is_constant(x) or _is_constant(y):
        return TestResult(0.0, 1.0, "dcor_perm", n, B=B, flags=("degenerate",))
    if _two_valued(y) is None and _two_valued(x) is not None:
        x, y = y, x
    ax = double_centered(distance_matrix(x))
    dvx = float(np.mean(ax * ax))
    tv = _two_valued(y)
    if tv is not None:
        e, gap = tv
        dvy = float(np.mean(double_centered(distance_matrix(y)) ** 2))
        scale = -2.0 * gap / (n * n * math.sqrt(dvx * dvy))

        def batch(idx):
            eb = e[idx]
            return np.einsum("bi,bi->b", eb @ ax, eb) * scale

        obs = float(batch(np.arange(n)[None, :])[0])
    else:
        by = double_centered(distance_matrix(y))
        dvy = float(np.mean(by * by))
        scale = 1.0 / (n * n * math.sqrt(dvx * dvy))

        def batch(idx):
            return np.array([np.sum(ax * by[np.ix_(row, row)]) for row in idx]) * scale

        obs = float(np.sum(ax * by)) * scale
    hits = 0
    for idx in permutation_chunks(n, None, B, seed):
        hits += _count_hits(batch(idx), obs)
    stat = math.sqrt(min(1.0, max(0.0, obs)))
    return TestResult(stat, _pvalue(hits, B), "dcor_perm", n, B=B)


def pdcor_perm_test(x, y, z, B: int = 1000, seed: int = 0, *, allow_large: bool = False) -> TestResult:
    """Permutation test of ``x _||_ y | z`` based on partial distance correlation.

    A discrete ``z`` (at most ``DISCRETE_MAX_LEVELS`` distinct values) keeps
    its levels fixed: one of ``x``, ``y`` is permuted within the levels of
    ``z``.  This leaves the distance matrix of ``z`` and the norms of both
    projections unchanged, so only the numerator has to be recomputed.  For a
    continuous ``z`` the projection of ``x`` is permuted as a whole
    (rows and columns together) against the fixed projection of ``y``.
    """
    x, y = _pair(x, y)
    z = _vec(z, "z")
    n = x.size
    if z.size != n:
        raise SpecificationError("length mismatch with z")
    if n < 4:
        raise SpecificationError("pdcor_perm_test needs n >= 4")
    if B < 99:
        raise SpecificationError(f"B must be >= 99, got {B}")
    _guard_size(n, allow_large)
    discrete = np.unique(z).size <= DISCRETE_MAX_LEVELS
    if discrete and _two_valued(y) is None and _two_valued(x) is not None:
        x, y = y, x
    ux, uy, uz = _bias_corrected_parts(x, y, z)
    obs = _pdcor_from_u(ux, uy, uz)
    nz = u_inner(uz, uz)
    px = _projection(ux, uz, nz)
    py = _projection(uy, uz, nz)
    norm = math.sqrt(u_inner(px, px) * u_inner(py, py))
    m = n * (n - 3)
    if discrete:
        codes = level_codes(z)
        tv = _two_valued(y)
        if tv is not None:
            e, gap = tv
            scale = -2.0 * gap / (m * norm)

            def batch(idx):
                eb = e[idx]
                return np.einsum("bi,bi->b", eb @ px, eb) * scale
        else:

            def batch(idx):
                return np.array([np.sum(px * uy[np.ix_(row, row)]) for row in idx]) / (m * norm)
    else:
        codes = None

        def batch(idx):
            return np.array([np.sum(px[np.ix_(row, row)] * py) for row in idx]) / (m * norm)

    ref = float(batch(np.arange(n)[None, :])[0])
    hits = 0
    for idx in permutation_chunks(n, codes, B, seed):
        hits += _count_hits(batch(idx), ref)
    return TestResult(obs, _pvalue(hits, B), "pdcor_perm", n, B=B, flags=() if discrete else ("projection_perm",))
