"""Linear-Gaussian data generator and the coverage/bias experiment harness."""

from __future__ import annotations

import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conddens import DensityConfig
from .data import Dataset, make_split
from .estimators import estimate_onestep, estimate_plugin, estimate_tmle
from .learners import LearnerConfig

ESTIMATORS = ("plugin", "onestep", "tmle")
ROW_FIELDS = ("rho", "estimator", "rep", "seed", "truth", "point", "se", "ci_lo", "ci_hi",
              "covered", "bias", "k_n", "converged", "failed")
AGG_FIELDS = ("rho", "estimator", "reps", "used", "failed", "nonconverged",
              "coverage", "mean_bias", "mean_width")


class ParameterError(ValueError):
    pass


class UnsupportedError(ValueError):
    pass


@dataclass(frozen=True)
class DgpSpec:
    """``(X, Z) ~ N(0, S)`` with unit variances and common correlation ``rho``; ``Y = beta X + noise``."""

    n: int
    d: int = 2
    rho: float = 0.5
    beta: float = 5.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise ParameterError(f"n must be >= 10, got {self.n}")
        if self.d < 2:
            raise ParameterError("d must be >= 2")
        if self.noise_sd < 0:
            raise ParameterError("noise_sd must be non-negative")

    def covariance(self) -> np.ndarray:
        return np.full((self.d, self.d), self.rho) + (1.0 - self.rho) * np.eye(self.d)


def generate(spec: DgpSpec) -> Dataset:
    cov = spec.covariance()
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ParameterError(f"covariance is not positive definite at rho={spec.rho}") from None
    rng = np.random.default_rng(spec.seed)
    cov_draws = rng.standard_normal((spec.n, spec.d)) @ chol.T
    x = cov_draws[:, 0]
    y = spec.beta * x + spec.noise_sd * rng.standard_normal(spec.n)
    return Dataset(y, x, cov_draws[:, 1:])


def true_importance(spec: DgpSpec, kind: str) -> float:
    """Closed-form population importance for the two-covariate design."""
    if spec.d != 2:
        raise UnsupportedError("closed forms are available for d = 2 only")
    b2 = spec.beta ** 2
    resid_var = 1.0 - spec.rho ** 2
    values = {"condperm": 2.0 * b2 * resid_var, "loco": b2 * resid_var, "margperm": 2.0 * b2}
    try:
        return values[kind]
    except KeyError:
        raise UnsupportedError(f"no closed form for {kind!r}") from None


@dataclass(frozen=True)
class SimConfig:
    """Estimator settings shared by every repetition."""

    kind: str = "condperm"
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    density: DensityConfig = field(default_factory=lambda: DensityConfig(m=64))
    alpha: float = 0.05
    K: int = 3
    max_iter: int = 100
    use_I3: bool = True
    beta: float = 5.0
    regression_term: bool = True


@dataclass
class ExperimentResult:
    rows: list[dict]
    aggregates: list[dict]

    def rows_csv(self) -> str:
        return _to_csv(ROW_FIELDS, self.rows)

    def aggregates_csv(self) -> str:
        return _to_csv(AGG_FIELDS, self.aggregates)

    def check(self) -> None:
        """Recompute the aggregates from the rows and compare."""
        if aggregate(self.rows) != self.aggregates:
            raise AssertionError("aggregates do not match the rows")


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _to_csv(fields, rows) -> str:
    out = io.StringIO()
    out.write(",".join(fields) + "\n")
    for r in rows:
        out.write(",".join(_cell(r[f]) for f in fields) + "\n")
    return out.getvalue()


def rep_seed(seed: int, rho_index: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rho_index, rep]).generate_state(1)[0])


def _run_rep(task) -> list[dict]:
    rho, rho_index, rep, n, estimators, cfg, seed = task
    s = rep_seed(seed, rho_index, rep)
    spec = DgpSpec(n=n, rho=rho, beta=cfg.beta, seed=s)
    truth = true_importance(spec, cfg.kind)
    data = generate(spec)
    plan = make_split(n, cfg.K, s)
    rows = []
    for est in estimators:
        row = {"rho": rho, "estimator": est, "rep": rep, "seed": s, "truth": truth}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if est == "tmle":
                    r = estimate_tmle(data, plan, cfg.kind, cfg.learner, cfg.density, cfg.alpha, s,
                                      cfg.max_iter, cfg.use_I3, cfg.regression_term)
                else:
                    fn = estimate_onestep if est == "onestep" else estimate_plugin
                    r = fn(data, plan, cfg.kind, cfg.learner, cfg.density, cfg.alpha, s,
                           cfg.regression_term)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            nan = float("nan")
            row.update(point=nan, se=nan, ci_lo=nan, ci_hi=nan, covered=False, bias=nan,
                       k_n=0, converged=False, failed=True)
        else:
            row.update(point=r.point, se=r.se, ci_lo=r.ci_lo, ci_hi=r.ci_hi,
                       covered=bool(r.ci_lo <= truth <= r.ci_hi), bias=r.point - truth,
                       k_n=r.k_n, converged=bool(r.converged), failed=False)
        rows.append(row)
    return rows


def aggregate(rows: list[dict]) -> list[dict]:
    """Per (rho, estimator) coverage, bias and width over converged, non-failed reps."""
    cells: dict = {}
    for r in rows:
        cells.setdefault((r["rho"], r["estimator"]), []).append(r)
    out = []
    for (rho, est), rs in cells.items():
        used = [r for r in rs if not r["failed"] and r["converged"]]
        nan = float("nan")
        out.append({
            "rho": rho, "estimator": est, "reps": len(rs), "used": len(used),
            "failed": sum(r["failed"] for r in rs),
            "nonconverged": sum(not r["failed"] and not r["converged"] for r in rs),
            "coverage": sum(r["covered"] for r in used) / len(used) if used else nan,
            "mean_bias": float(np.mean([r["bias"] for r in used])) if used else nan,
            "mean_width": float(np.mean([r["ci_hi"] - r["ci_lo"] for r in used])) if used else nan,
        })
    return out


def run_experiment(grid, reps: int, n: int, estimators=("onestep", "tmle"),
                   cfg: SimConfig = SimConfig(), seed: int = 0,
                   threads: int | None = None) -> ExperimentResult:
    """Repeat generate -> estimate -> compare over a grid of correlations.

    Repetition ``rep`` at grid position ``i`` uses the seed derived from
    ``(seed, i, rep)``; every estimator sees the same data set. Rows are
    ordered by (rho, estimator, rep) whatever the number of workers.
    """
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    estimators = tuple(estimators)
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        raise ParameterError(f"unknown estimators {bad}")
    grid = [float(r) for r in grid]
    for rho in grid:
        DgpSpec(n=n, rho=rho)
        true_importance(DgpSpec(n=n, rho=rho), cfg.kind)
    tasks = [(rho, i, rep, n, estimators, cfg, seed) for i, rho in enumerate(grid) for rep in range(reps)]
    threads = threads or os.cpu_count() or 1
    if threads == 1:
        per_task = [_run_rep(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_task = list(pool.map(_run_rep, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    by_key = {(r["rho"], r["estimator"], r["rep"]): r for rs in per_task for r in rs}
    rows = [by_key[(rho, est, rep)] for rho in grid for est in estimators for rep in range(reps)]
    return ExperimentResult(rows, aggregate(rows))


def plot_svg(result: ExperimentResult, path, alpha: float = 0.05) -> None:
    """Coverage and bias against rho, one line per estimator."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_cov, ax_bias) = plt.subplots(1, 2, figsize=(9, 3.5))
    for est in dict.fromkeys(a["estimator"] for a in result.aggregates):
        cells = [a for a in result.aggregates if a["estimator"] == est]
        rhos = [a["rho"] for a in cells]
        ax_cov.plot(rhos, [a["coverage"] for a in cells], marker="o", label=est)
        ax_bias.plot(rhos, [a["mean_bias"] for a in cells], marker="o", label=est)
    ax_cov.axhline(1 - alpha, color="grey", linestyle="--", linewidth=0.8)
    ax_bias.axhline(0.0, color="grey", linestyle="--", linewidth=0.8)
    ax_cov.set(xlabel="rho", ylabel="coverage", ylim=(0, 1.02))
    ax_bias.set(xlabel="rho", ylabel="mean bias")
    ax_cov.legend()
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "tlvi"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


__all__ = ["DgpSpec", "SimConfig", "ExperimentResult", "generate", "true_importance",
           "run_experiment", "aggregate", "plot_svg", "rep_seed"]
