"""Datasets, CSV ingestion and deterministic sample splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


class MissingColumnError(DataError):
    pass


class SplitSizeError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Row-aligned response ``y``, covariate of interest ``x`` and remaining covariates ``z``.

    ``z`` is always two-dimensional with shape ``(n, d - 1)``; it may have
    zero columns.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    response_name: str = "y"
    interest_name: str = "x"
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if not (len(y) == len(x) == z.shape[0]):
            raise DataError(
                f"column lengths differ: y={len(y)}, x={len(x)}, z={z.shape[0]}"
            )
        if len(y) < 3:
            raise DataError(f"need at least 3 rows, got {len(y)}")
        for name, arr in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        names = tuple(self.z_names) or tuple(f"z{j + 1}" for j in range(z.shape[1]))
        if len(names) != z.shape[1]:
            raise DataError("z_names does not match the number of z columns")
        for arr in (y, x, z):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "z_names", names)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        """Total covariate dimension (x plus z columns)."""
        return 1 + self.z.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.y[idx], self.x[idx], self.z[idx],
            self.response_name, self.interest_name, self.z_names,
        )


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return value


def load_csv(path, response_col: str, interest_col: str) -> Dataset:
    """Read a comma-separated file with a header row.

    Every column other than the response and the covariate of interest
    becomes a ``z`` column, in file order. Lines starting with ``#`` are
    treated as comments. Row numbers in error messages count data rows
    from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.lstrip().startswith("#"))
        reader = csv.reader(lines)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (response_col, interest_col):
            if col not in header:
                raise MissingColumnError(f"{path}: missing column {col!r}")
        rows = []
        for i, raw in enumerate(reader, start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise DataError(
                    f"row {i}: expected {len(header)} fields, got {len(raw)}"
                )
            rows.append([_parse_cell(c.strip(), i, header[j]) for j, c in enumerate(raw)])
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    iy, ix = header.index(response_col), header.index(interest_col)
    z_cols = [j for j in range(len(header)) if j not in (iy, ix)]
    return Dataset(
        table[:, iy], table[:, ix], table[:, z_cols],
        response_name=response_col,
        interest_name=interest_col,
        z_names=tuple(header[j] for j in z_cols),
    )


def write_csv(data: Dataset, path, header_comment: str | None = None) -> None:
    """Write ``data`` with shortest round-trip float formatting."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([data.response_name, data.interest_name, *data.z_names])
        for i in range(data.n):
            writer.writerow(
                [repr(float(data.y[i])), repr(float(data.x[i]))]
                + [repr(float(v)) for v in data.z[i]]
            )


@dataclass(frozen=True)
class SplitPlan:
    """Assignment of rows to ``K`` folds; fold ``k`` plays role ``I_{k+1}``."""

    folds: np.ndarray
    K: int
    seed: int
    _parts: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        folds = np.asarray(self.folds, dtype=int)
        folds.setflags(write=False)
        object.__setattr__(self, "folds", folds)
        parts = tuple(np.flatnonzero(folds == k) for k in range(self.K))
        object.__setattr__(self, "_parts", parts)

    @property
    def n(self) -> int:
        return len(self.folds)

    def part(self, k: int) -> np.ndarray:
        """Sorted row indices of fold ``k``."""
        return self._parts[k]

    def sizes(self) -> list[int]:
        return [len(p) for p in self._parts]


def make_split(n: int, K: int, seed: int) -> SplitPlan:
    """Random balanced partition of ``range(n)`` into ``K`` folds.

    Fold sizes differ by at most one and the assignment depends only on
    ``(n, K, seed)``.
    """
    if K < 2:
        raise SplitSizeError(f"K must be >= 2, got {K}")
    if n < K:
        raise SplitSizeError(f"cannot split {n} rows into {K} folds")
    rng = np.random.default_rng(np.uint64(seed))
    perm = rng.permutation(n)
    folds = np.empty(n, dtype=int)
    folds[perm] = np.arange(n) % K
    return SplitPlan(folds=folds, K=K, seed=int(seed))
