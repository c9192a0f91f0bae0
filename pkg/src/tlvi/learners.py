"""Regression learners: ridge and k-nearest-neighbours, with X-free variants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset


class SingularDesignError(np.linalg.LinAlgError):
    pass


class LearnerParameterError(ValueError):
    pass


@dataclass(frozen=True)
class FittedLearner:
    """A frozen regression map ``(x, z) -> prediction``.

    ``predict`` accepts a scalar ``x`` with a 1-d ``z`` or arrays of shape
    ``(n,)`` and ``(n, d - 1)``.
    """

    kind: str
    hyperparameters: dict
    fold: int | None
    uses_x: bool
    _fn: Callable = field(repr=False)
    coef: np.ndarray | None = None
    intercept: float | None = None

    def predict(self, x, z):
        x_arr = np.asarray(x, dtype=float)
        z_arr = np.asarray(z, dtype=float)
        scalar = x_arr.ndim == 0
        x2 = np.atleast_1d(x_arr)
        z2 = z_arr.reshape(len(x2), -1) if z_arr.size else np.zeros((len(x2), 0))
        out = self._fn(x2, z2)
        return float(out[0]) if scalar else out


def _design(x, z, uses_x: bool) -> np.ndarray:
    return np.column_stack([x, z]) if uses_x else np.asarray(z, dtype=float)


@dataclass(frozen=True)
class LearnerConfig:
    """Learner choice shared by estimators and the CLI."""

    kind: str = "ridge"
    penalty: float = 1e-6
    k: int | None = None

    def fit(self, data: Dataset, fold: int | None = None, uses_x: bool = True) -> FittedLearner:
        if self.kind == "ridge":
            return _fit_ridge(data, self.penalty, fold, uses_x)
        if self.kind == "knn":
            k = self.k if self.k is not None else math.ceil(math.sqrt(data.n))
            return _fit_knn(data, k, fold, uses_x)
        raise LearnerParameterError(f"unknown learner kind {self.kind!r}")


def _fit_ridge(data: Dataset, penalty: float, fold, uses_x) -> FittedLearner:
    if penalty < 0:
        raise LearnerParameterError("penalty must be non-negative")
    X = _design(data.x, data.z, uses_x)
    n, p = X.shape
    if n < p + 1:
        raise LearnerParameterError(f"need at least {p + 1} rows for ridge, got {n}")
    mu_x = X.mean(axis=0)
    mu_y = data.y.mean()
    Xc = X - mu_x
    gram = Xc.T @ Xc / n + penalty * np.eye(p)
    rhs = Xc.T @ (data.y - mu_y) / n
    if p and penalty == 0 and np.linalg.matrix_rank(gram) < p:
        raise SingularDesignError(
            "normal equations are singular at penalty 0; use a positive penalty"
        )
    beta = np.linalg.solve(gram, rhs) if p else np.zeros(0)
    b0 = float(mu_y - mu_x @ beta)

    def fn(x, z, beta=beta, b0=b0):
        return b0 + _design(x, z, uses_x) @ beta

    return FittedLearner(
        kind="ridge", hyperparameters={"penalty": penalty}, fold=fold,
        uses_x=uses_x, _fn=fn, coef=beta, intercept=b0,
    )


def _fit_knn(data: Dataset, k: int, fold, uses_x) -> FittedLearner:
    X = _design(data.x, data.z, uses_x)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise LearnerParameterError(f"k must be in [1, {n}], got {k}")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    train = (X - center) / scale
    y = data.y.copy()

    def fn(x, z):
        query = (_design(x, z, uses_x) - center) / scale
        out = np.empty(len(query))
        for start in range(0, len(query), 512):
            q = query[start:start + 512]
            d2 = ((q[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
            # stable sort: equal distances resolve to the lowest training row
            nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
            out[start:start + 512] = y[nn].mean(axis=1)
        return out

    return FittedLearner(
        kind="knn", hyperparameters={"k": k}, fold=fold, uses_x=uses_x, _fn=fn,
    )


def fit_ridge(data: Dataset, penalty: float = 1e-6, fold: int | None = None) -> FittedLearner:
    """Least squares with an unpenalized intercept and penalty on the mean loss.

    Minimizes ``mean((y - b0 - [x, z] @ beta) ** 2) + penalty * |beta|^2``.
    """
    return _fit_ridge(data, penalty, fold, True)


def fit_knn(data: Dataset, k: int | None = None, fold: int | None = None) -> FittedLearner:
    """k-NN regression in standardized ``(x, z)`` space."""
    return LearnerConfig(kind="knn", k=k).fit(data, fold)


def fit_without_x(data: Dataset, kind: str = "ridge", fold: int | None = None, **hyper) -> FittedLearner:
    """Fit the X-free learner ``z -> prediction`` of the given kind."""
    return LearnerConfig(kind=kind, **hyper).fit(data, fold, uses_x=False)
