"""Efficient influence functions of the squared-error loss functionals.

All functionals treat the prediction map ``f`` in the context as given.
Four loss functionals are supported:

``refloss``        E[L(Y, f(X, Z))]
``condperm_loss``  E[L(Y, f(X^C, Z))] with X^C ~ X | Z drawn independently of Y
``loco_loss``      E[L(Y, g(Z))] for the X-free learner g
``margperm_loss``  E[L(Y, f(X^pi, Z))] with X^pi ~ X drawn independently of (Y, Z)

Importances are differences against ``refloss``. Conditional integrals are
discretized on the support points of the context's density models.

With ``regression_term=False`` (default) the influence functions are the
canonical gradients of the functionals at fixed ``f``. With
``regression_term=True`` each one gains the leading term contributed by the
prediction map when it is itself regarded as the regression ``E[Y | X, Z]``
(respectively ``E[Y | Z]`` for the X-free learner).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .conddens import CondDensityModel, PartitionDensity, UnsupportedKindError
from .learners import FittedLearner

LOSS_KINDS = ("refloss", "condperm_loss", "loco_loss", "margperm_loss")
IMPORTANCE_KINDS = ("condperm", "loco", "margperm")
IMPORTANCE_COMPONENT = {
    "condperm": "condperm_loss",
    "loco": "loco_loss",
    "margperm": "margperm_loss",
}


class NumericError(ArithmeticError):
    pass


class ConfigurationError(ValueError):
    pass


def loss(y, pred):
    return (np.asarray(y) - np.asarray(pred)) ** 2


def loss_grad(y, pred):
    """Derivative of the loss in the prediction argument."""
    return -2.0 * (np.asarray(y) - np.asarray(pred))


@dataclass(frozen=True)
class WeightedPoints:
    """A finite weighted set of observations ``(x, y, z)``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray

    @classmethod
    def uniform(cls, x, y, z) -> "WeightedPoints":
        x = np.asarray(x, dtype=float)
        return cls(x, np.asarray(y, dtype=float),
                   np.asarray(z, dtype=float).reshape(len(x), -1),
                   np.full(len(x), 1.0 / len(x)))

    def __len__(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class EifContext:
    learner: FittedLearner
    px: CondDensityModel
    py: CondDensityModel
    m: int = 256
    psi_hat: float = 0.0
    xfree: FittedLearner | None = None
    mean_model: FittedLearner | None = None
    population: WeightedPoints | None = None
    regression_term: bool = False
    loco_form: str = "xfree"

    def __post_init__(self):
        if self.m < 2:
            raise ConfigurationError("m must be at least 2")
        if not np.isfinite(self.psi_hat):
            raise ConfigurationError("psi_hat must be finite")
        if self.loco_form not in ("xfree", "printed"):
            raise ConfigurationError(f"unknown loco_form {self.loco_form!r}")

    def with_psi(self, psi_hat: float) -> "EifContext":
        return replace(self, psi_hat=float(psi_hat))


def _check(value, term: str) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise NumericError(f"non-finite value in {term}")
    return value


def _pred(learner, x, z) -> float:
    return float(learner.predict(x, z))


def _y_support(ctx, z):
    return ctx.py.support_points(z, ctx.m)


def _x_support(ctx, z):
    return ctx.px.support_points(z, ctx.m)


def eif_ref(ctx: EifContext, point) -> float:
    x, y, z = point
    fx = _pred(ctx.learner, x, z)
    mean_model = ctx.mean_model or ctx.learner
    # the integral of L'(y, f) against p(y | x, z) is -2 (E[Y | x, z] - f)
    lead = (y - fx) * (-2.0) * (_pred(mean_model, x, z) - fx)
    return _check(_check(lead, "refloss leading term") + loss(y, fx) - ctx.psi_hat, "refloss")


def eif_condperm(ctx: EifContext, point) -> float:
    x, y, z = point
    xs, wx = _x_support(ctx, z)
    ys, wy = _y_support(ctx, z)
    fx = _pred(ctx.learner, x, z)
    fxs = ctx.learner.predict(xs, np.tile(np.atleast_1d(z), (len(xs), 1)))
    t2 = _check(wy @ loss(ys, fx), "condperm term 2")
    t3 = _check(wx @ loss(ys[None, :], fxs[:, None]) @ wy, "condperm term 3")
    t4 = _check(wx @ loss(y, fxs), "condperm term 4")
    out = t2 - t3 + t4 - ctx.psi_hat
    if ctx.regression_term:
        out += _check((y - fx) * (wy @ loss_grad(ys, fx)), "condperm term 1")
    return out


def eif_loco(ctx: EifContext, point) -> float:
    if ctx.xfree is None:
        raise ConfigurationError("LOCO requires an X-free learner in the context")
    x, y, z = point
    gz = _pred(ctx.xfree, x, z)
    out = _check(loss(y, gz), "loco loss") - ctx.psi_hat
    if ctx.regression_term:
        ys, wy = _y_support(ctx, z)
        at = gz if ctx.loco_form == "xfree" else _pred(ctx.learner, x, z)
        out += _check((y - gz) * (wy @ loss_grad(ys, at)), "loco term 1")
    return out


def _require_population(ctx) -> WeightedPoints:
    if ctx.population is None:
        raise ConfigurationError("marginal permutation needs ctx.population")
    return ctx.population


def eif_margperm(ctx: EifContext, point) -> float:
    if isinstance(ctx.px, PartitionDensity):
        raise UnsupportedKindError(
            "marginal permutation needs the density ratio p(x)/p(x|z); partition "
            "densities are refused because the ratio is unstable"
        )
    pop = _require_population(ctx)
    x, y, z = point
    z = np.atleast_1d(np.asarray(z, dtype=float))
    fx = _pred(ctx.learner, x, z)
    f_perm = ctx.learner.predict(pop.x, np.tile(z, (len(pop), 1)))
    t2 = _check(pop.w @ loss(y, f_perm), "margperm term 2")
    f_at_x = ctx.learner.predict(np.full(len(pop), float(x)), pop.z)
    t3 = _check(pop.w @ loss(pop.y, f_at_x), "margperm term 3")
    out = t2 + t3 - 2.0 * ctx.psi_hat
    if ctx.regression_term:
        ratio = ctx.px.marginal_density(x) / ctx.px.density(x, z)
        ys, wy = _y_support(ctx, z)
        out += _check((y - fx) * ratio * (wy @ loss_grad(ys, fx)), "margperm term 1")
    return out


_EIF = {
    "refloss": eif_ref,
    "condperm_loss": eif_condperm,
    "loco_loss": eif_loco,
    "margperm_loss": eif_margperm,
}


def eif_values(ctx: EifContext, kind: str, points: WeightedPoints, psi_hat=None) -> np.ndarray:
    """Influence function of a loss functional or an importance at each point.

    For an importance kind, ``psi_hat`` is a pair ``(component, reference)``
    of plug-in values and the result is the pointwise difference.
    """
    if kind in IMPORTANCE_KINDS:
        comp_psi, ref_psi = psi_hat if psi_hat is not None else (ctx.psi_hat, 0.0)
        a = eif_values(ctx, IMPORTANCE_COMPONENT[kind], points, comp_psi)
        b = eif_values(ctx, "refloss", points, ref_psi)
        return a - b
    try:
        fn = _EIF[kind]
    except KeyError:
        raise ValueError(f"unknown estimand kind {kind!r}") from None
    c = ctx if psi_hat is None else ctx.with_psi(psi_hat)
    return np.array([fn(c, (points.x[i], points.y[i], points.z[i])) for i in range(len(points))])


def plugin_value(ctx: EifContext, kind: str, points: WeightedPoints, integrate_y: bool = False) -> float:
    """Plug-in value of a loss functional (or importance) under weighted points.

    The conditional copy X^C is integrated over the support of ``ctx.px``.
    By default the observed responses are used; ``integrate_y`` integrates
    Y over ``ctx.py`` instead.
    """
    if len(points) == 0:
        raise ValueError("empty evaluation set")
    if kind in IMPORTANCE_KINDS:
        return (plugin_value(ctx, IMPORTANCE_COMPONENT[kind], points, integrate_y)
                - plugin_value(ctx, "refloss", points))
    w = points.w
    if kind == "refloss":
        return float(w @ loss(points.y, ctx.learner.predict(points.x, points.z)))
    if kind == "loco_loss":
        if ctx.xfree is None:
            raise ConfigurationError("LOCO requires an X-free learner in the context")
        return float(w @ loss(points.y, ctx.xfree.predict(points.x, points.z)))
    if kind == "condperm_loss":
        total = 0.0
        for i in range(len(points)):
            z = points.z[i]
            xs, wx = _x_support(ctx, z)
            fxs = ctx.learner.predict(xs, np.tile(z, (len(xs), 1)))
            if integrate_y:
                ys, wy = _y_support(ctx, z)
                inner = wx @ loss(ys[None, :], fxs[:, None]) @ wy
            else:
                inner = wx @ loss(points.y[i], fxs)
            total += w[i] * inner
        return float(total)
    if kind == "margperm_loss":
        n = len(points)
        total = 0.0
        for i in range(n):
            preds = ctx.learner.predict(points.x, np.tile(points.z[i], (n, 1)))
            total += w[i] * (w @ loss(points.y[i], preds))
        return float(total)
    raise ValueError(f"unknown estimand kind {kind!r}")
