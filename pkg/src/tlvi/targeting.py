"""Iterative targeting of the conditional-permutation loss by likelihood fluctuation.

The working distribution is a finite weighted support. Each conditioning
value ``z_b`` owns a block of synthetic pairs ``(x, y)`` drawn from the
fitted conditionals; the block mass (the z-marginal) never changes, only the
mass inside each block moves. Observed points sit in the support with zero
weight: they carry the likelihood but no plug-in mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conddens import CondDensityModel
from .learners import FittedLearner

EPS_TOL = 1e-7
SCORE_TOL = 1e-10
SHRINK = 0.999


class InvariantError(RuntimeError):
    pass


@dataclass(frozen=True)
class FluctuationSupport:
    """Weighted points with block (z) membership and origin tags.

    ``pred`` caches the fixed learner's prediction at each point; ``z`` is
    stored per block in ``z_blocks``.
    """

    x: np.ndarray
    y: np.ndarray
    block: np.ndarray
    weights: np.ndarray
    observed: np.ndarray
    pred: np.ndarray
    z_blocks: np.ndarray
    block_mass: np.ndarray

    def __post_init__(self):
        if len(self.x) < 2:
            raise InvariantError("support needs at least two points")
        if np.any(self.weights < 0):
            raise InvariantError("negative weight")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvariantError(f"weights sum to {self.weights.sum()!r}")

    def __len__(self):
        return len(self.x)

    @property
    def n_blocks(self) -> int:
        return len(self.block_mass)

    def observed_indices(self, blocks=None) -> np.ndarray:
        idx = np.flatnonzero(self.observed)
        if blocks is not None:
            idx = idx[np.isin(self.block[idx], blocks)]
        return idx

    def z(self) -> np.ndarray:
        return self.z_blocks[self.block]


def _pair(xs, wx, ys, wy, rng):
    """Join x and y supports of one block into weighted pairs."""
    m = xs.shape[0]
    if ys.shape[0] == m and np.allclose(wx, 1.0 / m) and np.allclose(wy, 1.0 / m):
        return xs, ys[rng.permutation(m)], np.full(m, 1.0 / m)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return gx.ravel(), gy.ravel(), np.outer(wx, wy).ravel()


def build_support(learner: FittedLearner, px: CondDensityModel, py: CondDensityModel,
                  z_blocks, x_obs, y_obs, m: int = 256, *, pairing_seed: int = 0,
                  rng: np.random.Generator | None = None) -> FluctuationSupport:
    """Working support with one block per row of ``z_blocks``.

    Observed point ``i`` belongs to block ``i``. Synthetic x and y come from
    the deterministic support points of ``px``/``py``, or from ``m`` random
    draws each when ``rng`` is given; they are paired by a seeded random
    permutation.
    """
    z_blocks = np.asarray(z_blocks, dtype=float).reshape(len(x_obs), -1)
    B = len(z_blocks)
    if rng is None:
        xs, wx = px.support_points_batch(z_blocks, m)
        ys, wy = py.support_points_batch(z_blocks, m)
    else:
        xs = np.array([px.sample(zb, rng, m) for zb in z_blocks])
        ys = np.array([py.sample(zb, rng, m) for zb in z_blocks])
        wx = wy = np.full((B, m), 1.0 / m)
    pair_rng = np.random.default_rng(pairing_seed)
    cols = {"x": [], "y": [], "block": [], "w": []}
    mass = np.full(B, 1.0 / B)
    for b in range(B):
        px_b, py_b, w_b = _pair(xs[b], wx[b], ys[b], wy[b], pair_rng)
        cols["x"].append(px_b)
        cols["y"].append(py_b)
        cols["block"].append(np.full(len(px_b), b))
        cols["w"].append(mass[b] * w_b / w_b.sum())
    n_syn = sum(len(v) for v in cols["x"])
    x = np.concatenate(cols["x"] + [np.asarray(x_obs, dtype=float)])
    y = np.concatenate(cols["y"] + [np.asarray(y_obs, dtype=float)])
    block = np.concatenate(cols["block"] + [np.arange(B)])
    weights = np.concatenate(cols["w"] + [np.zeros(B)])
    observed = np.arange(len(x)) >= n_syn
    pred = learner.predict(x, z_blocks[block])
    return FluctuationSupport(x, y, block, weights, observed, pred, z_blocks, mass)


def block_moments(support: FluctuationSupport):
    """Per-block E[Y], E[Y^2], E[f], E[f^2] under the block's conditional weights."""
    q = support.weights / support.block_mass[support.block]
    B = support.n_blocks

    def avg(v):
        return np.bincount(support.block, weights=q * v, minlength=B)

    y, f = support.y, support.pred
    return avg(y), avg(y * y), avg(f), avg(f * f)


def condperm_terms(support: FluctuationSupport):
    """Pointwise integrals of the conditional-permutation influence function.

    Returns ``(a, b, A)``: ``a = E_y[L(y, f(x, z))]`` and
    ``b = E_x[L(y, f(x, z))]`` at every support point, and the block
    constants ``A = E_x E_y L``.
    """
    ey, ey2, ef, ef2 = block_moments(support)
    blk = support.block
    f, y = support.pred, support.y
    a = ey2[blk] - 2.0 * f * ey[blk] + f * f
    b = y * y - 2.0 * y * ef[blk] + ef2[blk]
    A = ey2 - 2.0 * ey * ef + ef2
    return a, b, A


def conditional_eif(support: FluctuationSupport) -> np.ndarray:
    """Projection of the influence function on the ``(x, y) | z`` factor.

    Has zero weighted mean inside every block, so fluctuating along it
    leaves the block masses unchanged.
    """
    a, b, A = condperm_terms(support)
    return a + b - 2.0 * A[support.block]


def epsilon_mle(support: FluctuationSupport, psi_values, fit_indices) -> tuple[float, float]:
    """Maximize the fluctuation log-likelihood in ``eps``.

    The objective is ``sum_fit log(1 + eps psi_i) - |fit| log c(eps)`` with
    ``c(eps) = sum_j w_j (1 + eps psi_j)``, over the interval where
    ``1 + eps psi_j > 0`` for every support point (shrunk by 0.999). The
    score is bisected to ``SCORE_TOL``.
    """
    psi = np.asarray(psi_values, dtype=float)
    fit = np.asarray(fit_indices)
    if len(fit) == 0:
        raise ValueError("fit_indices must be non-empty")
    if not np.all(support.observed[fit]):
        raise ValueError("fit_indices must point at observed points")
    if not np.any(psi):
        return 0.0, 1.0
    pf = psi[fit]
    s = float(support.weights @ psi)
    n_fit = len(fit)

    def score(eps):
        return float(np.sum(pf / (1.0 + eps * pf)) - n_fit * s / (1.0 + eps * s))

    g0 = score(0.0)
    if g0 == 0.0:
        return 0.0, 1.0
    # admissible interval from the most extreme support values
    pmax, pmin = psi.max(), psi.min()
    hi = SHRINK * (-1.0 / pmin) if pmin < 0 else math.inf
    lo = SHRINK * (-1.0 / pmax) if pmax > 0 else -math.inf
    if not lo < 0 < hi:
        raise InvariantError("empty fluctuation interval")
    direction = 1.0 if g0 > 0 else -1.0
    end = hi if direction > 0 else lo
    if math.isinf(end):
        end = direction
        while score(end) * direction > 0:
            end *= 2.0
            if abs(end) > 1e12:
                raise InvariantError("fluctuation likelihood is unbounded")
    if score(end) * direction >= 0:
        eps = end
    else:
        a, b = 0.0, end
        eps = 0.5 * (a + b)
        for _ in range(400):
            eps = 0.5 * (a + b)
            g = score(eps)
            if abs(g) <= SCORE_TOL or eps in (a, b):
                break
            if g * direction > 0:
                a = eps
            else:
                b = eps
    return eps, 1.0 + eps * s


def apply_fluctuation(support: FluctuationSupport, psi_values, eps: float, c: float) -> FluctuationSupport:
    """Reweight ``w_j <- w_j (1 + eps psi_j) / c``; block masses are restored exactly."""
    if eps == 0.0:
        return support
    factor = 1.0 + eps * np.asarray(psi_values, dtype=float)
    if np.any(factor[support.weights > 0] <= 0):
        raise InvariantError("fluctuation makes a weight non-positive")
    w = support.weights * factor / c
    totals = np.bincount(support.block, weights=w, minlength=support.n_blocks)
    w = w * (support.block_mass / np.where(totals > 0, totals, 1.0))[support.block]
    w = w / w.sum()
    if np.any(w < 0):
        raise InvariantError("negative weight after fluctuation")
    return replace(support, weights=w)


# ---------------------------------------------------------------------------
# summaries over a set of blocks


@dataclass(frozen=True)
class BlockSummary:
    """Plug-in values and pointwise influence functions over chosen blocks."""

    condperm_loss: float
    refloss: float
    eif_condperm_loss: np.ndarray
    eif_refloss: np.ndarray
    lead_condperm: np.ndarray
    indices: np.ndarray

    @property
    def importance(self) -> float:
        return self.condperm_loss - self.refloss

    @property
    def eif_importance(self) -> np.ndarray:
        return self.eif_condperm_loss - self.eif_refloss


def summarize(support: FluctuationSupport, blocks) -> BlockSummary:
    """Working plug-in of the conditional-permutation loss on ``blocks``.

    The reference loss uses the empirical law of the observed points of the
    same blocks. ``lead_condperm`` is the regression-variation term at those
    points (only added to the influence function on request).
    """
    blocks = np.asarray(blocks)
    a, b, A = condperm_terms(support)
    obs = support.observed_indices(blocks)
    mass = support.block_mass[blocks]
    cp = float(mass @ A[blocks] / mass.sum())
    ref_loss = (support.y[obs] - support.pred[obs]) ** 2
    ref = float(ref_loss.mean())
    ey, _, _, _ = block_moments(support)
    f_obs = support.pred[obs]
    lead = (support.y[obs] - f_obs) * (-2.0) * (ey[support.block[obs]] - f_obs)
    return BlockSummary(
        condperm_loss=cp,
        refloss=ref,
        eif_condperm_loss=a[obs] + b[obs] - A[support.block[obs]] - cp,
        eif_refloss=ref_loss - ref,
        lead_condperm=lead,
        indices=obs,
    )


# ---------------------------------------------------------------------------
# the loop


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    epsilon: float
    mean_eif: float
    loglik: float
    psi_hat: float


@dataclass
class TargetingTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    threshold: float = 0.0

    @property
    def k_n(self) -> int:
        return len(self.records) - 1 if self.records else 0

    @property
    def epsilons(self) -> list[float]:
        return [r.epsilon for r in self.records[1:]]

    def csv_rows(self) -> list[str]:
        rows = ["iter,epsilon,mean_eif,loglik,psi_hat"]
        rows += [f"{r.iteration},{r.epsilon!r},{r.mean_eif!r},{r.loglik!r},{r.psi_hat!r}"
                 for r in self.records]
        return rows


TOL_KINDS = ("tmle-standard", "strict")


def stopping_threshold(psi_fit: np.ndarray, tol_kind: str) -> float:
    if tol_kind == "strict":
        return 1e-9
    if tol_kind == "tmle-standard":
        n = len(psi_fit)
        return float(np.std(psi_fit, ddof=1) / (math.sqrt(n) * math.log(n))) if n > 2 else 0.0
    raise ValueError(f"unknown tol_kind {tol_kind!r}")


def target(support: FluctuationSupport, fit_blocks=None, max_iter: int = 100,
           tol_kind: str = "tmle-standard", estimand: str = "condperm",
           refresh=None) -> tuple[FluctuationSupport, TargetingTrace]:
    """Fluctuate ``support`` until the fit-set mean influence function vanishes.

    Each iteration recomputes the conditional influence function on the
    current support, finds the likelihood-maximizing ``eps`` from the
    observed points of ``fit_blocks`` and reweights. Blocks outside
    ``fit_blocks`` are carried along: they are reweighted with the same
    ``eps`` but do not enter the likelihood. Stops when
    ``|mean psi| <= threshold``, when ``|eps| <= 1e-7``, or after
    ``max_iter`` updates (``converged`` is then False).

    ``refresh`` optionally maps ``(iteration, epsilons)`` to a newly drawn
    support on which the previous updates have been replayed.
    """
    if estimand not in ("condperm", "condperm_loss", "refloss"):
        raise ValueError(f"targeting supports condperm importance and its components, not {estimand!r}")
    fit_blocks = np.arange(support.n_blocks) if fit_blocks is None else np.asarray(fit_blocks)
    fit = support.observed_indices(fit_blocks)
    trace = TargetingTrace()

    def snapshot(sup):
        s = summarize(sup, fit_blocks)
        if estimand == "refloss":
            return s.eif_refloss, s.refloss
        if estimand == "condperm_loss":
            return s.eif_condperm_loss, s.condperm_loss
        return s.eif_importance, s.importance

    psi_fit, psi_hat = snapshot(support)
    trace.threshold = stopping_threshold(psi_fit, tol_kind)
    trace.records.append(TraceRecord(0, 0.0, float(psi_fit.mean()), 0.0, psi_hat))
    loglik = 0.0
    if estimand == "refloss":
        trace.converged = True  # the empirical law already solves its score
        return support, trace
    for it in range(1, max_iter + 1):
        trace.threshold = stopping_threshold(psi_fit, tol_kind)
        if abs(psi_fit.mean()) <= trace.threshold:
            trace.converged = True
            break
        if refresh is not None:
            support = refresh(it, trace.epsilons)
        psi = conditional_eif(support)
        eps, c = epsilon_mle(support, psi, fit)
        if abs(eps) <= EPS_TOL:
            trace.converged = True
            break
        loglik += float(np.sum(np.log1p(eps * psi[fit])) - len(fit) * math.log(c))
        support = apply_fluctuation(support, psi, eps, c)
        psi_fit, psi_hat = snapshot(support)
        trace.records.append(TraceRecord(it, float(eps), float(psi_fit.mean()), loglik, psi_hat))
    else:
        trace.threshold = stopping_threshold(psi_fit, tol_kind)
        trace.converged = abs(psi_fit.mean()) <= trace.threshold
    return support, trace


def replay(support: FluctuationSupport, epsilons) -> FluctuationSupport:
    """Apply a recorded sequence of fluctuations to another support.

    A step that would leave the admissible interval of this support is
    shortened to the interval edge (shrunk by 0.999).
    """
    for eps in epsilons:
        psi = conditional_eif(support)
        if eps > 0 and psi.min() < 0:
            eps = min(eps, SHRINK * (-1.0 / psi.min()))
        elif eps < 0 and psi.max() > 0:
            eps = max(eps, SHRINK * (-1.0 / psi.max()))
        c = 1.0 + eps * float(support.weights @ psi)
        support = apply_fluctuation(support, psi, eps, c)
    return support
