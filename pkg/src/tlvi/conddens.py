"""Conditional law models for ``x | z`` and ``y | z``.

Each model can sample, evaluate a density, and return a finite weighted
support (points, weights) that stands in for the conditional law inside
the influence-function integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


class DensitySizeError(ValueError):
    pass


class UnsupportedKindError(ValueError):
    pass


SIGMA_FLOOR = 1e-8


def _as_rows(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim <= 1:
        z = z.reshape(1, -1) if z.ndim == 1 else z.reshape(1, 1)
    return z


class CondDensityModel:
    """Common interface; subclasses implement the batch methods."""

    kind: str = "abstract"

    def support_points_batch(self, z: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Supports for each row of ``z``: arrays of shape ``(rows, m)``."""
        raise NotImplementedError

    def support_points(self, z, m: int) -> tuple[np.ndarray, np.ndarray]:
        pts, wts = self.support_points_batch(_as_rows(z), m)
        return pts[0], wts[0]

    def sample(self, z, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def density(self, v, z) -> float:
        raise NotImplementedError

    def marginal_density(self, v) -> float:
        raise UnsupportedKindError(
            f"{self.kind} densities do not provide a marginal density; density "
            "ratios are unstable under extrapolation and are refused"
        )


# ---------------------------------------------------------------------------
# partition (regression-tree) model


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    leaf: int = -1


def _best_split(zs: np.ndarray, vals: np.ndarray, min_leaf: int):
    n = len(vals)
    total_sse = ((vals - vals.mean()) ** 2).sum()
    best = (0.0, None, None)
    for f in range(zs.shape[1]):
        order = np.argsort(zs[:, f], kind="stable")
        zf, vf = zs[order, f], vals[order]
        cs, cs2 = np.cumsum(vf), np.cumsum(vf ** 2)
        i = np.arange(min_leaf, n - min_leaf + 1)
        if len(i) == 0:
            continue
        valid = zf[i - 1] < zf[np.minimum(i, n - 1)]
        i = i[valid]
        if len(i) == 0:
            continue
        left_sse = cs2[i - 1] - cs[i - 1] ** 2 / i
        right_sum, right_sum2 = cs[-1] - cs[i - 1], cs2[-1] - cs2[i - 1]
        right_sse = right_sum2 - right_sum ** 2 / (n - i)
        gain = total_sse - left_sse - right_sse
        j = int(np.argmax(gain))
        if gain[j] > best[0] + 1e-12 * max(total_sse, 1.0):
            best = (float(gain[j]), f, 0.5 * (zf[i[j] - 1] + zf[i[j]]))
    return best[1], best[2]


class PartitionDensity(CondDensityModel):
    """Tree partition of z-space with the empirical law of values in each leaf."""

    kind = "partition"

    def __init__(self, values, z, min_leaf: int = 25):
        values = np.asarray(values, dtype=float).ravel()
        z = np.asarray(z, dtype=float).reshape(len(values), -1)
        if min_leaf < 1 or len(values) < 2 * min_leaf:
            raise DensitySizeError(
                f"need at least 2 * min_leaf = {2 * min_leaf} rows, got {len(values)}"
            )
        self.min_leaf = min_leaf
        self.nodes: list[_Node] = []
        self.leaf_values: list[np.ndarray] = []
        self.leaf_index: list[np.ndarray] = []
        self._grow(np.arange(len(values)), z, values)
        self._widths = [self._fd_width(v) for v in self.leaf_values]

    def _grow(self, idx, z, values) -> int:
        node_id = len(self.nodes)
        self.nodes.append(_Node())
        feature, threshold = (None, None)
        if len(idx) >= 2 * self.min_leaf and z.shape[1] > 0:
            feature, threshold = _best_split(z[idx], values[idx], self.min_leaf)
        if feature is None:
            self.nodes[node_id].leaf = len(self.leaf_values)
            self.leaf_values.append(np.sort(values[idx]))
            self.leaf_index.append(idx)
            return node_id
        go_left = z[idx, feature] <= threshold
        left = self._grow(idx[go_left], z, values)
        right = self._grow(idx[~go_left], z, values)
        node = self.nodes[node_id]
        node.feature, node.threshold, node.left, node.right = feature, threshold, left, right
        return node_id

    @staticmethod
    def _fd_width(v: np.ndarray) -> float:
        q75, q25 = np.percentile(v, [75, 25])
        h = 2.0 * (q75 - q25) * len(v) ** (-1.0 / 3.0)
        if h <= 0:
            h = max(v[-1] - v[0], SIGMA_FLOOR)
        return float(h)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_values)

    def leaf_of(self, z) -> np.ndarray:
        z = _as_rows(z)
        out = np.empty(len(z), dtype=int)
        for r, row in enumerate(z):
            node = self.nodes[0]
            while node.leaf < 0:
                node = self.nodes[node.left if row[node.feature] <= node.threshold else node.right]
            out[r] = node.leaf
        return out

    def support_points_batch(self, z, m):
        leaves = self.leaf_of(z)
        levels = (np.arange(m) + 0.5) / m
        pts = np.empty((len(leaves), m))
        for r, leaf in enumerate(leaves):
            vals = self.leaf_values[leaf]
            # inverse empirical CDF at mid-quantile levels
            pos = np.ceil(levels * len(vals)).astype(int) - 1
            pts[r] = vals[np.clip(pos, 0, len(vals) - 1)]
        return pts, np.full((len(leaves), m), 1.0 / m)

    def sample(self, z, rng, size=None):
        vals = self.leaf_values[self.leaf_of(z)[0]]
        return rng.choice(vals, size=size)

    def density(self, v, z) -> float:
        leaf = self.leaf_of(z)[0]
        vals, h = self.leaf_values[leaf], self._widths[leaf]
        lo = vals[0]
        if v < lo or v >= vals[-1] + h:
            return 0.0
        b = np.floor((v - lo) / h)
        count = np.count_nonzero(np.floor((vals - lo) / h) == b)
        return count / (len(vals) * h)


# ---------------------------------------------------------------------------
# gaussian-linear model


def normal_quadrature(m: int) -> np.ndarray:
    """Equal-weight standard normal nodes with exact first two moments.

    Mid-quantile nodes are symmetrized and rescaled so their mean is 0 and
    their mean square is 1, which makes every quadratic integrand exact.
    """
    if m < 2:
        raise DensitySizeError("need at least 2 support points")
    q = stats.norm.ppf((np.arange(m) + 0.5) / m)
    q = 0.5 * (q - q[::-1])
    return q / np.sqrt(np.mean(q ** 2))


class GaussianLinearDensity(CondDensityModel):
    """``values = intercept + z @ beta + sigma * N(0, 1)`` fitted by least squares.

    ``sigma`` is the maximum-likelihood residual scale, floored at 1e-8; a
    floored fit sets ``degenerate``.
    """

    kind = "gaussian"

    def __init__(self, values, z):
        values = np.asarray(values, dtype=float).ravel()
        z = np.asarray(z, dtype=float).reshape(len(values), -1)
        n, p = z.shape
        if n < p + 1:
            raise DensitySizeError(f"need at least {p + 1} rows, got {n}")
        design = np.column_stack([np.ones(n), z])
        if np.linalg.matrix_rank(design) < p + 1:
            raise np.linalg.LinAlgError("singular design for gaussian-linear density")
        coef, *_ = np.linalg.lstsq(design, values, rcond=None)
        resid = values - design @ coef
        sigma = float(np.sqrt(np.mean(resid ** 2)))
        self.degenerate = sigma < SIGMA_FLOOR
        self.intercept = float(coef[0])
        self.beta = coef[1:]
        self.sigma = max(sigma, SIGMA_FLOOR)
        self.marginal_mean = float(values.mean())
        self.marginal_sd = max(float(values.std()), SIGMA_FLOOR)

    def mean(self, z) -> np.ndarray:
        return self.intercept + _as_rows(z) @ self.beta

    def support_points_batch(self, z, m):
        mu = self.mean(z)
        q = normal_quadrature(m)
        return mu[:, None] + self.sigma * q[None, :], np.full((len(mu), m), 1.0 / m)

    def sample(self, z, rng, size=None):
        return self.mean(z)[0] + self.sigma * rng.standard_normal(size)

    def density(self, v, z) -> float:
        return float(stats.norm.pdf(v, loc=self.mean(z)[0], scale=self.sigma))

    def marginal_density(self, v) -> float:
        return float(stats.norm.pdf(v, loc=self.marginal_mean, scale=self.marginal_sd))


# ---------------------------------------------------------------------------
# exact discrete conditionals (verification and tests)


class DiscreteConditional(CondDensityModel):
    """Finite conditional laws looked up by the exact value of ``z``.

    ``table`` maps ``tuple(z)`` to ``(values, probabilities)``; the optional
    ``marginal`` is ``(values, probabilities)`` of the unconditional law.
    ``support_points`` ignores ``m`` and returns the full support.
    """

    kind = "discrete"

    def __init__(self, table: dict, marginal=None):
        self.table = {
            tuple(np.atleast_1d(np.asarray(k, dtype=float))): (
                np.asarray(v, dtype=float), np.asarray(p, dtype=float) / np.sum(p)
            )
            for k, (v, p) in table.items()
        }
        self.marginal = marginal

    @classmethod
    def from_points(cls, values, z, probs) -> "DiscreteConditional":
        values = np.asarray(values, dtype=float)
        z = np.asarray(z, dtype=float).reshape(len(values), -1)
        probs = np.asarray(probs, dtype=float)
        groups: dict = {}
        for v, zz, p in zip(values, z, probs):
            bucket = groups.setdefault(tuple(zz), {})
            bucket[v] = bucket.get(v, 0.0) + p
        table = {k: (list(b.keys()), list(b.values())) for k, b in groups.items()}
        marg: dict = {}
        for v, p in zip(values, probs):
            marg[v] = marg.get(v, 0.0) + p
        marginal = (np.array(list(marg.keys())), np.array(list(marg.values())) / probs.sum())
        return cls(table, marginal)

    def _lookup(self, z):
        key = tuple(np.atleast_1d(np.asarray(z, dtype=float)).ravel())
        try:
            return self.table[key]
        except KeyError:
            raise KeyError(f"z={key} is outside the discrete support") from None

    def support_points(self, z, m=None):
        return self._lookup(z)

    def support_points_batch(self, z, m=None):
        rows = [self._lookup(r) for r in _as_rows(z)]
        width = max(len(v) for v, _ in rows)
        pts = np.zeros((len(rows), width))
        wts = np.zeros((len(rows), width))
        for r, (v, p) in enumerate(rows):
            pts[r, :len(v)], wts[r, :len(v)] = v, p
            pts[r, len(v):] = v[0]
        return pts, wts

    def sample(self, z, rng, size=None):
        v, p = self._lookup(z)
        return rng.choice(v, size=size, p=p)

    def density(self, v, z) -> float:
        vals, p = self._lookup(z)
        return float(p[vals == v].sum())

    def marginal_density(self, v) -> float:
        if self.marginal is None:
            return super().marginal_density(v)
        vals, p = self.marginal
        return float(p[vals == v].sum())


def fit_partition_density(values, z, min_leaf: int = 25) -> PartitionDensity:
    return PartitionDensity(values, z, min_leaf)


def fit_gaussian_linear(values, z) -> GaussianLinearDensity:
    return GaussianLinearDensity(values, z)


@dataclass(frozen=True)
class DensityConfig:
    """Density kind and support size shared by estimators and the CLI."""

    kind: str = "gaussian"
    m: int = 256
    min_leaf: int = 25

    def fit(self, values, z) -> CondDensityModel:
        if self.kind == "gaussian":
            return GaussianLinearDensity(values, z)
        if self.kind == "partition":
            return PartitionDensity(values, z, self.min_leaf)
        raise UnsupportedKindError(f"unknown density kind {self.kind!r}")
