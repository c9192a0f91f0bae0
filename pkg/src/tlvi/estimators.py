"""Plug-in, one-step and targeted estimators with Wald intervals.

Nuisances (the prediction map, the X-free map and the two conditional
laws) are always fitted on fold ``I1``. The one-step estimator corrects the
plug-in with the mean influence function over the remaining rows. The
targeted estimator fluctuates the working law on ``I2`` and reports the
plug-in on ``I3`` (or on ``I2`` when ``use_I3`` is off).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .conddens import DensityConfig
from .data import Dataset, SplitPlan, make_split
from .eif import (
    IMPORTANCE_COMPONENT,
    IMPORTANCE_KINDS,
    LOSS_KINDS,
    EifContext,
    WeightedPoints,
    eif_values,
    plugin_value,
)
from .learners import LearnerConfig
from .targeting import build_support, replay, summarize, target

REPORT_FIELDS = ("estimand", "estimator", "point", "se", "ci_lo", "ci_hi",
                 "alpha", "n_inf", "k_n", "converged", "seed")
TMLE_KINDS = ("condperm", "refloss", "condperm_loss")


class EstimationWarning(UserWarning):
    pass


def wald_ci(point: float, se: float, alpha: float = 0.05) -> tuple[float, float]:
    """Two-sided normal interval ``point -/+ z_{alpha/2} se``."""
    if se < 0:
        raise ValueError("se must be non-negative")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    half = stats.norm.isf(alpha / 2) * se
    return float(point - half), float(point + half)


@dataclass
class EstimateReport:
    estimand: str
    estimator: str
    point: float
    se: float
    alpha: float
    n_inf: int
    seed: int
    k_n: int = 0
    converged: bool = True
    degenerate: bool = False
    fold_scheme: str = ""
    trace: object = None
    subreports: list = field(default_factory=list)
    eif: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.ci_lo, self.ci_hi = wald_ci(self.point, self.se, self.alpha)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_FIELDS}

    def to_text(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in self.as_dict().items()]
        lines += [f"degenerate={_fmt(self.degenerate)}", f"fold_scheme={self.fold_scheme}"]
        return "\n".join(lines)

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_FIELDS)

    def to_csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.as_dict().values())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Nuisances:
    learner: object
    xfree: object
    px: object
    py: object


def fit_nuisances(train: Dataset, learner_cfg: LearnerConfig, density_cfg: DensityConfig,
                  need_xfree: bool = False, fold: int | None = 0) -> Nuisances:
    learner = learner_cfg.fit(train, fold)
    xfree = learner_cfg.fit(train, fold, uses_x=False) if need_xfree else None
    return Nuisances(learner, xfree, density_cfg.fit(train.x, train.z), density_cfg.fit(train.y, train.z))


def _check_kind(kind: str):
    if kind not in LOSS_KINDS + IMPORTANCE_KINDS:
        raise ValueError(f"unknown estimand {kind!r}")


def _se(psi: np.ndarray, scale: float) -> tuple[float, bool]:
    """Standard error of the mean of ``psi``; ``scale`` is the loss magnitude of the data."""
    if len(psi) < 2:
        return 0.0, True
    sd = float(np.std(psi, ddof=1))
    if sd <= 1e-12 * max(1.0, scale):
        warnings.warn("influence function is degenerate; se set to 0", EstimationWarning, stacklevel=3)
        return 0.0, True
    return sd / math.sqrt(len(psi)), False


def _condperm_family(nuis: Nuisances, ev: Dataset, kind: str, m: int, regression_term: bool,
                     pairing_seed: int):
    """Working plug-in and influence values for condperm kinds on ``ev``."""
    sup = build_support(nuis.learner, nuis.px, nuis.py, ev.z, ev.x, ev.y, m, pairing_seed=pairing_seed)
    s = summarize(sup, np.arange(sup.n_blocks))
    return _pick(s, kind, regression_term)


def _pick(s, kind, regression_term):
    if kind == "refloss":
        return s.refloss, s.eif_refloss
    lead = s.lead_condperm if regression_term else 0.0
    if kind == "condperm_loss":
        return s.condperm_loss, s.eif_condperm_loss + lead
    return s.importance, s.eif_importance + lead


def _other_family(nuis: Nuisances, ev: Dataset, kind: str, m: int, regression_term: bool):
    pts = WeightedPoints.uniform(ev.x, ev.y, ev.z)
    ctx = EifContext(nuis.learner, nuis.px, nuis.py, m=m, xfree=nuis.xfree,
                     population=pts, regression_term=regression_term)
    if kind in IMPORTANCE_KINDS:
        comp = plugin_value(ctx, IMPORTANCE_COMPONENT[kind], pts)
        ref = plugin_value(ctx, "refloss", pts)
        return comp - ref, eif_values(ctx, kind, pts, (comp, ref))
    value = plugin_value(ctx, kind, pts)
    return value, eif_values(ctx, kind, pts, value)


def _initial(nuis, ev, kind, m, regression_term, pairing_seed):
    if kind in ("condperm", "condperm_loss", "refloss"):
        return _condperm_family(nuis, ev, kind, m, regression_term, pairing_seed)
    return _other_family(nuis, ev, kind, m, regression_term)


def _onestep_roles(data, train_idx, eval_idx, kind, learner_cfg, density_cfg, alpha, seed,
                   regression_term, plugin_only=False) -> EstimateReport:
    train, ev = data.subset(train_idx), data.subset(eval_idx)
    nuis = fit_nuisances(train, learner_cfg, density_cfg, need_xfree=kind in ("loco", "loco_loss"))
    plug, psi = _initial(nuis, ev, kind, density_cfg.m, regression_term, seed)
    point = plug if plugin_only else plug + float(psi.mean())
    se, degenerate = _se(psi, float(np.mean(ev.y ** 2)))
    return EstimateReport(kind, "plugin" if plugin_only else "onestep", point, se, alpha,
                          len(eval_idx), seed, degenerate=degenerate, eif=psi - psi.mean())


def estimate_onestep(data: Dataset, plan: SplitPlan, kind: str = "condperm",
                     learner_cfg: LearnerConfig = LearnerConfig(),
                     density_cfg: DensityConfig = DensityConfig(),
                     alpha: float = 0.05, seed: int | None = None,
                     regression_term: bool = True) -> EstimateReport:
    """Plug-in plus mean influence function.

    Nuisances are fitted on fold 0; the correction and the standard error
    use every other fold.
    """
    _check_kind(kind)
    wald_ci(0.0, 0.0, alpha)
    seed = plan.seed if seed is None else seed
    rest = np.flatnonzero(plan.folds != 0)
    rep = _onestep_roles(data, plan.part(0), rest, kind, learner_cfg, density_cfg, alpha, seed,
                         regression_term)
    rep.fold_scheme = f"split{plan.K}:fit=I1,infer=rest"
    return rep


def estimate_plugin(data: Dataset, plan: SplitPlan, kind: str = "condperm",
                    learner_cfg: LearnerConfig = LearnerConfig(),
                    density_cfg: DensityConfig = DensityConfig(),
                    alpha: float = 0.05, seed: int | None = None,
                    regression_term: bool = True) -> EstimateReport:
    """Uncorrected working plug-in; the interval uses the influence-function variance."""
    _check_kind(kind)
    seed = plan.seed if seed is None else seed
    rest = np.flatnonzero(plan.folds != 0)
    rep = _onestep_roles(data, plan.part(0), rest, kind, learner_cfg, density_cfg, alpha, seed,
                         regression_term, plugin_only=True)
    rep.fold_scheme = f"split{plan.K}:fit=I1,infer=rest"
    return rep


def _tmle_roles(data, i1, i2, i3, kind, learner_cfg, density_cfg, alpha, seed, max_iter,
                regression_term, tol_kind, refresh) -> EstimateReport:
    train = data.subset(i1)
    nuis = fit_nuisances(train, learner_cfg, density_cfg)
    blocks_idx = np.concatenate([i2, i3]) if i3 is not None else np.asarray(i2)
    part = data.subset(blocks_idx)
    m = density_cfg.m

    def make(rng=None):
        return build_support(nuis.learner, nuis.px, nuis.py, part.z, part.x, part.y, m,
                             pairing_seed=seed, rng=rng)

    sup = make()
    fit_blocks = np.arange(len(i2))
    refresher = None
    if refresh:
        draw_rng = np.random.default_rng([seed, 1])

        def refresher(it, epsilons):
            return replay(make(draw_rng), epsilons)

    sup, trace = target(sup, fit_blocks, max_iter, tol_kind, kind, refresh=refresher)
    point, psi = _pick(summarize(sup, fit_blocks), kind, regression_term)
    if i3 is not None:
        # the point stays on the targeted blocks; I3 only re-estimates the spread
        _, psi = _pick(summarize(sup, np.arange(len(i2), len(blocks_idx))), kind, regression_term)
    se, degenerate = _se(psi, float(np.mean(part.y ** 2)))
    if not trace.converged:
        warnings.warn(f"targeting did not converge in {max_iter} iterations",
                      EstimationWarning, stacklevel=3)
    return EstimateReport(kind, "tmle", point, se, alpha, len(psi), seed,
                          k_n=trace.k_n, converged=trace.converged, degenerate=degenerate,
                          trace=trace, eif=psi - psi.mean())


def estimate_tmle(data: Dataset, plan: SplitPlan, kind: str = "condperm",
                  learner_cfg: LearnerConfig = LearnerConfig(),
                  density_cfg: DensityConfig = DensityConfig(),
                  alpha: float = 0.05, seed: int | None = None, max_iter: int = 100,
                  use_I3: bool = True, regression_term: bool = True,
                  tol_kind: str = "tmle-standard", refresh: bool = False) -> EstimateReport:
    """Targeted estimator: fit on I1, target on I2, variance from I3 (or I2).

    The point is the plug-in over the targeted I2 blocks, where the mean
    influence function has been driven to zero. With ``use_I3`` the I3 rows
    are carried through the same fluctuations and their influence values
    give the standard error.
    """
    if kind not in TMLE_KINDS:
        raise ValueError(f"targeting is available for {TMLE_KINDS}, not {kind!r}")
    wald_ci(0.0, 0.0, alpha)
    need = 3 if use_I3 else 2
    if plan.K < need:
        raise ValueError(f"use_I3={use_I3} needs a plan with at least {need} parts")
    seed = plan.seed if seed is None else seed
    rep = _tmle_roles(data, plan.part(0), plan.part(1), plan.part(2) if use_I3 else None,
                      kind, learner_cfg, density_cfg, alpha, seed, max_iter, regression_term,
                      tol_kind, refresh)
    rep.fold_scheme = f"split{plan.K}:fit=I1,target=I2,infer={'I3' if use_I3 else 'I2'}"
    return rep


def estimate_kfold(data: Dataset, K: int, kind: str = "condperm", estimator: str = "tmle",
                   learner_cfg: LearnerConfig = LearnerConfig(),
                   density_cfg: DensityConfig = DensityConfig(),
                   alpha: float = 0.05, seed: int = 0, max_iter: int = 100,
                   use_I3: bool = True, regression_term: bool = True,
                   tol_kind: str = "tmle-standard") -> EstimateReport:
    """Cross-fitted estimate averaged over ``K`` fold rotations.

    Rotation ``r`` infers on fold ``r``. For ``tmle`` with ``use_I3`` it
    targets on fold ``r + 1`` and fits nuisances on the remaining folds;
    otherwise the nuisances use every fold but ``r``. The standard error pools
    the fold-centred influence values of all inference folds.
    """
    if estimator not in ("onestep", "tmle", "plugin"):
        raise ValueError(f"unknown estimator {estimator!r}")
    min_k = 3 if estimator == "tmle" and use_I3 else 2
    if K < min_k:
        raise ValueError(f"{estimator} cross-fitting needs K >= {min_k}")
    plan = make_split(data.n, K, seed)
    subs = []
    for r in range(K):
        infer = plan.part(r)
        try:
            if estimator == "tmle":
                tgt = plan.part((r + 1) % K) if use_I3 else infer
                skip = {r, (r + 1) % K} if use_I3 else {r}
                fit = np.flatnonzero(~np.isin(plan.folds, list(skip)))
                rep = _tmle_roles(data, fit, tgt, infer if use_I3 else None, kind, learner_cfg,
                                  density_cfg, alpha, seed, max_iter, regression_term, tol_kind, False)
            else:
                fit = np.flatnonzero(plan.folds != r)
                rep = _onestep_roles(data, fit, infer, kind, learner_cfg, density_cfg, alpha, seed,
                                     regression_term, plugin_only=estimator == "plugin")
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise ValueError(f"fold {r}: {exc}") from exc
        rep.fold_scheme = f"kfold{K}:infer=fold{r}"
        subs.append(rep)
    point = float(np.mean([s.point for s in subs]))
    pooled = np.concatenate([s.eif for s in subs])
    n_total = len(pooled)
    var = sum(float(np.var(s.eif, ddof=1)) * len(s.eif) for s in subs) / n_total
    se = math.sqrt(var / n_total)
    return EstimateReport(kind, estimator, point, se, alpha, n_total, seed,
                          k_n=max(s.k_n for s in subs),
                          converged=all(s.converged for s in subs),
                          degenerate=se == 0.0, fold_scheme=f"kfold{K}", subreports=subs)
