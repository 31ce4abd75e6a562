"""The sample container and its CSV format.

CSV layout: header ``id,y,a,x1,...,xd``, one row per sample, comma
separated, UTF-8, ``.`` decimal point.  Reals are written with ``repr`` so a
write/read round trip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import SpecificationError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features ``x`` (n, d), labels ``y`` (n,), confounder ``a`` (n,).

    ``y`` is normally binary 0/1.  The linear-SCM simulator also produces a
    continuous response; such datasets report ``is_binary == False`` and are
    rejected by the classifier-facing operations.
    """

    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    weights: np.ndarray | None = None
    ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise SpecificationError("x must be a 2-d array (n, d)")
        y = np.asarray(self.y, dtype=float)
        a = np.asarray(self.a, dtype=float)
        n = x.shape[0]
        if y.shape != (n,) or a.shape != (n,):
            raise SpecificationError(
                f"length mismatch: x has {n} rows, y has {y.shape}, a has {a.shape}"
            )
        if n < 2:
            raise SpecificationError("a dataset needs at least 2 rows")
        for name, v in (("x", x), ("y", y), ("a", a)):
            if not np.all(np.isfinite(v)):
                raise SpecificationError(f"{name} contains non-finite values")
        if np.all((y == 0) | (y == 1)):
            y = y.astype(np.int64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (n,):
                raise SpecificationError("weights must have one entry per row")
            if np.any(w < 0) or not np.any(w > 0) or not np.all(np.isfinite(w)):
                raise SpecificationError("weights must be finite, >= 0, and not all zero")
            object.__setattr__(self, "weights", w)
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (n,):
            raise SpecificationError("ids must have one entry per row")
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.y.dtype.kind == "i"

    def require_binary(self) -> "Dataset":
        if not self.is_binary:
            raise SpecificationError("labels y must be 0/1 for this operation")
        return self

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        w = None if self.weights is None else self.weights[idx]
        return Dataset(self.x[idx], self.y[idx], self.a[idx], weights=w, ids=self.ids[idx])

    def with_x(self, x) -> "Dataset":
        return replace(self, x=x)

    def with_weights(self, weights) -> "Dataset":
        return replace(self, weights=weights)

    def equals(self, other: "Dataset") -> bool:
        """Bit-for-bit equality of all arrays."""
        same_w = (self.weights is None and other.weights is None) or (
            self.weights is not None
            and other.weights is not None
            and np.array_equal(self.weights, other.weights)
        )
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.ids, other.ids)
            and same_w
        )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(d: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "y", "a"] + [f"x{j + 1}" for j in range(d.d)])
        ycol = [str(int(v)) for v in d.y] if d.is_binary else [_fmt(v) for v in d.y]
        for i in range(d.n):
            w.writerow([str(int(d.ids[i])), ycol[i], _fmt(d.a[i])] + [_fmt(v) for v in d.x[i]])


def read_csv(path, require_binary: bool = True) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SpecificationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["id", "y", "a"] or len(header) < 4:
        raise SpecificationError(f"{path}: header must start with id,y,a and have at least one x column")
    expected = [f"x{j + 1}" for j in range(len(header) - 3)]
    if header[3:] != expected:
        raise SpecificationError(f"{path}: feature columns must be named {','.join(expected)}")
    body = [r for r in rows[1:] if r]
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise SpecificationError(f"{path}: non-numeric field ({exc})") from None
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise SpecificationError(f"{path}: ragged rows")
    y = arr[:, 1]
    if require_binary and not np.all((y == 0) | (y == 1)):
        raise SpecificationError(f"{path}: column y must contain only 0/1")
    return Dataset(arr[:, 3:], y, arr[:, 2], ids=arr[:, 0].astype(np.int64))
