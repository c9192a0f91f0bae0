"""
Conditional permutation importance on one simulated data set
=============================================================

Draw Y = 5 X + noise with corr(X, Z) = 0.5, where the population
importance is 50 (1 - 0.25) = 37.5, and compare the three estimators.
"""

import numpy as np

from tlvi import DensityConfig, LearnerConfig, estimate_onestep, estimate_plugin, estimate_tmle, make_split
from tlvi.sim import DgpSpec, generate, true_importance

spec = DgpSpec(n=1500, rho=0.5, seed=42)
data = generate(spec)
truth = true_importance(spec, "condperm")
print(f"n={data.n}  true importance={truth}")

# %%
# One plan shared by all estimators: nuisances on part 0, the rest for
# correction, targeting and variance.
plan = make_split(data.n, 3, seed=42)
learner = LearnerConfig("ridge")
density = DensityConfig("gaussian", m=256)

for fn in (estimate_plugin, estimate_onestep, estimate_tmle):
    r = fn(data, plan, "condperm", learner, density)
    print(f"{r.estimator:8s} point={r.point:7.2f}  95% CI=({r.ci_lo:6.2f}, {r.ci_hi:6.2f})  k_n={r.k_n}")

# %%
# The targeting trace: each step is an exact one-dimensional likelihood
# maximization, so the cumulative log-likelihood never decreases.
r = estimate_tmle(data, plan, "condperm", learner, density)
for line in r.trace.csv_rows():
    print(line)

# %%
# A nonlinear learner works the same way; the conditional laws stay
# gaussian-linear here because they match the design. The target is the
# importance of the fitted learner, and kNN flattens the slope, so its
# value sits below the linear truth.
knn = estimate_tmle(data, plan, "condperm", LearnerConfig("knn", k=25), density)
print(f"kNN tmle point={knn.point:.2f}  se={knn.se:.2f}")

# %%
# Other importances are available through the one-step estimator.
for kind in ("loco", "margperm"):
    r = estimate_onestep(data, plan, kind, learner, DensityConfig(m=64))
    print(f"{kind:9s} point={r.point:6.2f}  truth={true_importance(spec, kind):6.2f}  se={r.se:.2f}")

print("residual check:", np.round(np.mean(data.y - 5 * data.x), 3))
