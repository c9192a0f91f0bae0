"""Independent oracles for the influence-function code.

Estimands of finite discrete distributions are evaluated by exhaustive
summation, and canonical gradients are approximated by central finite
differences along point-mass contamination paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conddens import DiscreteConditional
from .eif import EifContext, WeightedPoints, eif_values, loss
from .learners import FittedLearner

MAX_SUPPORT = 50
TOLERANCE = {"refloss": 1e-4, "condperm_loss": 1e-4, "loco_loss": 1e-4, "margperm_loss": 1e-3}


class StepError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteJoint:
    """Finite law on distinct points ``(x_k, y_k, z_k)`` with masses ``probs``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).reshape(len(x), -1)
        p = np.asarray(self.probs, dtype=float).ravel()
        if not (len(x) == len(y) == len(p)) or len(x) == 0:
            raise ValueError("support arrays must be non-empty and aligned")
        if len(x) > MAX_SUPPORT:
            raise ValueError(f"support limited to {MAX_SUPPORT} points")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be positive and sum to 1")
        keys = {(a, b, *c) for a, b, c in zip(x, y, z)}
        if len(keys) != len(x):
            raise ValueError("support points must be distinct")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return len(self.x)

    def with_probs(self, probs) -> "DiscreteJoint":
        return DiscreteJoint(self.x, self.y, self.z, probs / np.sum(probs))

    def points(self) -> WeightedPoints:
        return WeightedPoints(self.x, self.y, self.z, self.probs)


def _same(a, b) -> bool:
    return bool(np.all(a == b))


def tracked_regressions(dist: DiscreteJoint, learner: FittedLearner):
    """Regression maps computed from ``dist``.

    Returns ``(full, xfree)`` where ``full(x, z)`` is E[Y | x, z] on the
    support and falls back to ``learner`` elsewhere, and ``xfree(z)`` is
    E[Y | z].
    """

    def full(x, z):
        num = den = 0.0
        for k in range(len(dist)):
            if dist.x[k] == x and _same(dist.z[k], z):
                num += dist.probs[k] * dist.y[k]
                den += dist.probs[k]
        return num / den if den > 0 else float(learner.predict(x, z))

    def xfree(z):
        num = den = 0.0
        for k in range(len(dist)):
            if _same(dist.z[k], z):
                num += dist.probs[k] * dist.y[k]
                den += dist.probs[k]
        return num / den

    return full, xfree


def exact_estimand(dist: DiscreteJoint, kind: str, learner: FittedLearner,
                   xfree: FittedLearner | None = None, track_regression: bool = False) -> float:
    """Exact value of a loss functional by nested sums over the support.

    With ``track_regression`` the predictions are the regressions of
    ``dist`` itself (see :func:`tracked_regressions`) instead of the fixed
    learners.
    """
    if track_regression:
        f, g = tracked_regressions(dist, learner)
    else:
        f = lambda x, z: float(learner.predict(x, z))  # noqa: E731
        g = (lambda z: float(xfree.predict(0.0, z))) if xfree is not None else None
    p = dist.probs
    n = len(dist)
    if kind == "refloss":
        return float(sum(p[k] * loss(dist.y[k], f(dist.x[k], dist.z[k])) for k in range(n)))
    if kind == "loco_loss":
        if g is None:
            raise ValueError("loco_loss needs an X-free learner")
        return float(sum(p[k] * loss(dist.y[k], g(dist.z[k])) for k in range(n)))
    if kind == "margperm_loss":
        return float(sum(p[k] * p[l] * loss(dist.y[k], f(dist.x[l], dist.z[k]))
                         for k in range(n) for l in range(n)))
    if kind == "condperm_loss":
        total = 0.0
        z_keys = {tuple(r) for r in dist.z}
        for zk in z_keys:
            in_z = [k for k in range(n) if tuple(dist.z[k]) == zk]
            pz = sum(p[k] for k in in_z)
            px: dict = {}
            py: dict = {}
            for k in in_z:
                px[dist.x[k]] = px.get(dist.x[k], 0.0) + p[k] / pz
                py[dist.y[k]] = py.get(dist.y[k], 0.0) + p[k] / pz
            zarr = np.array(zk)
            for xv, pxv in px.items():
                fx = f(xv, zarr)
                for yv, pyv in py.items():
                    total += pz * pxv * pyv * loss(yv, fx)
        return float(total)
    raise ValueError(f"unknown estimand kind {kind!r}")


def gateaux_fd(dist: DiscreteJoint, kind: str, learner: FittedLearner, j: int, t: float = 1e-5,
               xfree: FittedLearner | None = None, track_regression: bool = False) -> float:
    """Central difference of the functional along contamination toward point ``j``.

    Evaluates ``[Psi((1 - t) P + t d_j) - Psi((1 + t) P - t d_j)] / (2 t)``.
    """
    pj = dist.probs[j]
    bound = pj / (1.0 - pj) if pj < 1 else np.inf
    # (1 + t) P - t d_j keeps positive mass at j only while t < p_j / (1 - p_j)
    if not 0 < t < bound:
        raise StepError(f"step t={t} must lie in (0, {bound})")
    e = np.zeros(len(dist))
    e[j] = 1.0
    plus = dist.with_probs((1 - t) * dist.probs + t * e)
    minus = dist.with_probs((1 + t) * dist.probs - t * e)
    up = exact_estimand(plus, kind, learner, xfree, track_regression)
    down = exact_estimand(minus, kind, learner, xfree, track_regression)
    return (up - down) / (2 * t)


def _wrap(fn, kind: str) -> FittedLearner:
    def vec(x, z):
        return np.array([fn(xi, zi) for xi, zi in zip(x, z)])

    return FittedLearner(kind=kind, hyperparameters={}, fold=None, uses_x=True, _fn=vec)


def context_for(dist: DiscreteJoint, kind: str, learner: FittedLearner,
                xfree: FittedLearner | None = None, regression_term: bool = False,
                loco_form: str = "xfree") -> EifContext:
    """Influence-function context whose conditionals are the exact laws of ``dist``.

    With ``regression_term`` the learners are replaced by the tracked
    regressions of ``dist`` so that the leading terms are exercised.
    """
    if regression_term:
        full, g = tracked_regressions(dist, learner)
        learner = _wrap(full, "tracked")
        xfree = _wrap(lambda x, z: g(z), "tracked-xfree")
    px = DiscreteConditional.from_points(dist.x, dist.z, dist.probs)
    py = DiscreteConditional.from_points(dist.y, dist.z, dist.probs)
    ctx = EifContext(learner=learner, px=px, py=py, m=MAX_SUPPORT, xfree=xfree,
                     population=dist.points(), regression_term=regression_term,
                     loco_form=loco_form)
    return ctx.with_psi(exact_estimand(dist, kind, learner, xfree))


def random_joint(rng: np.random.Generator, size: int | None = None) -> DiscreteJoint:
    """Random law on up to 20 points over a small (x, z) grid with continuous y."""
    size = size or int(rng.integers(2, 21))
    n_z = int(rng.integers(1, 4))
    x_grid = np.round(rng.normal(size=3), 3)
    z_grid = np.round(rng.normal(size=n_z), 3)
    x = rng.choice(x_grid, size=size)
    z = rng.choice(z_grid, size=size)
    y = np.round(rng.normal(scale=2.0, size=size), 6)
    p = rng.dirichlet(np.full(size, 2.0)) + 0.02
    return DiscreteJoint(x, y, z.reshape(-1, 1), p / p.sum())


def random_learners(rng: np.random.Generator) -> tuple[FittedLearner, FittedLearner]:
    a, b, c, d = rng.normal(size=4)
    a2, c2, e2 = rng.normal(size=3)

    def f(x, z):
        return a + b * x + c * z[:, 0] + d * x * z[:, 0]

    def g(x, z):
        return a2 + c2 * z[:, 0] + e2 * z[:, 0] ** 2

    return (FittedLearner("poly", {}, None, True, f),
            FittedLearner("poly-xfree", {}, None, False, g))


@dataclass(frozen=True)
class CheckRow:
    kind: str
    trials: int
    max_rel_err: float
    max_mean_eif: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance and self.max_mean_eif <= 1e-10


def check_eif(trials: int = 100, kinds=None, seed: int = 0, t: float = 1e-5,
              regression_term: bool = False) -> list[CheckRow]:
    """Compare closed-form influence functions with the finite-difference oracle.

    Every kind sees ``trials`` random discrete laws; reports the worst
    relative error ``|eif - fd| / (1 + |eif|)`` and the worst absolute
    probability-weighted mean of the influence function.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    kinds = list(kinds or TOLERANCE)
    rows = []
    for kind in kinds:
        rng = np.random.default_rng([seed, list(TOLERANCE).index(kind)])
        worst = worst_mean = 0.0
        for _ in range(trials):
            dist = random_joint(rng)
            learner, xfree = random_learners(rng)
            ctx = context_for(dist, kind, learner, xfree, regression_term)
            psi = eif_values(ctx, kind, dist.points())
            worst_mean = max(worst_mean, abs(dist.probs @ psi))
            for j in range(len(dist)):
                fd = gateaux_fd(dist, kind, learner, j, t, xfree, track_regression=regression_term)
                worst = max(worst, abs(psi[j] - fd) / (1 + abs(psi[j])))
        rows.append(CheckRow(kind, trials, float(worst), float(worst_mean), TOLERANCE[kind]))
    return rows
