"""Confounder levels and within-level index permutations."""

from __future__ import annotations

import numpy as np

from ._rng import rng_for
from .errors import DegenerateConfounderError, SpecificationError

# Permutations are drawn in chunks, one RNG stream per chunk, so the draws do
# not depend on how chunks are scheduled.  The chunk size depends only on n.
PERM_CHUNK = 250
_CHUNK_CELLS = 4_000_000


def chunk_size(n: int) -> int:
    return max(1, min(PERM_CHUNK, _CHUNK_CELLS // max(n, 1)))


def level_codes(a) -> np.ndarray:
    """Integer codes for the distinct values of ``a`` (exact equality)."""
    _, codes = np.unique(np.asarray(a), return_inverse=True)
    return codes.reshape(-1)


def stratify(a, strata: int = 10) -> np.ndarray:
    """Quantile bins of ``a`` as consecutive level indices ``0..k-1``.

    If ``a`` has at most ``strata`` distinct values each value is its own
    level.  Otherwise interior quantile edges are computed and duplicated
    edges (from ties) are merged, so ``k <= strata``; empty bins cannot occur
    because every bin is relabelled from the values actually present.
    """
    a = np.asarray(a, dtype=float)
    if strata < 2:
        raise SpecificationError(f"strata must be >= 2, got {strata}")
    uniq = np.unique(a)
    if uniq.size < 2:
        raise DegenerateConfounderError()
    if uniq.size <= strata:
        return level_codes(a)
    edges = np.unique(np.quantile(a, np.linspace(0.0, 1.0, strata + 1)[1:-1]))
    raw = np.searchsorted(edges, a, side="left")
    return level_codes(raw)


def level_groups(codes: np.ndarray) -> list[np.ndarray]:
    order = np.argsort(codes, kind="stable")
    bounds = np.flatnonzero(np.diff(codes[order])) + 1
    return np.split(order, bounds)


def permutation_chunks(n: int, codes, B: int, seed: int):
    """Yield index arrays of shape (c, n), permuting positions within levels.

    Row ``b`` maps output position ``i`` to source position ``idx[b, i]``;
    positions only ever receive sources from their own level.  ``codes=None``
    means a single level (unrestricted permutation).
    """
    groups = [np.arange(n)] if codes is None else level_groups(np.asarray(codes))
    size = chunk_size(n)
    done = 0
    chunk = 0
    while done < B:
        c = min(size, B - done)
        rng = rng_for(seed, chunk)
        idx = np.empty((c, n), dtype=np.intp)
        for g in groups:
            idx[:, g] = rng.permuted(np.broadcast_to(g, (c, g.size)), axis=1)
        yield idx
        done += c
        chunk += 1
