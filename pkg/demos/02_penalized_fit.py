"""One penalized fit, up close.

Simulates the three-group benchmark at moderate dimension, fits a single
grid cell with the L1-penalized mean update, and shows what the penalty
does: the objective trace, which mean coordinates survived, and the
agreement of the recovered partition with the truth.
"""

import numpy as np

from lpbic import (
    FitConfig,
    ModelDescriptor,
    PenaltyConfig,
    SimSpec,
    adjusted_rand_index,
    contingency_table,
    fit,
    simulate,
)

data, labels = simulate(SimSpec(p=60, seed=5))
print(f"data: {data.n} x {data.p}, groups of", np.bincount(labels)[1:])

model = ModelDescriptor("CUC", G=3, q=1)
config = FitConfig(n_starts=4, seed=17, init="kmeans", tolerance=1e-3,
                   max_iterations=500)
result = fit(data, model, PenaltyConfig.reciprocal_p(), config)

print(f"\nfit {model.code} G={model.G} q={model.q}")
print(f"  converged: {result.converged} after {result.iterations} iterations")
print(f"  log-likelihood {result.loglik:.2f}, penalized {result.penalized_loglik:.2f}")
# the penalty is linear in the mixing proportions, so their maximizer leans
# toward components with small mean norms; the responsibility masses stay
# at the sample split
print(f"  mixing proportions (penalized): {np.round(result.params.pi, 3)}")
print(f"  responsibility masses:          {np.round(result.z.z.mean(axis=0), 3)}")
print(f"  nonzero mean coordinates per group: {result.nonzero_mean_counts} of p={data.p}")

steps = np.diff(result.trace)
print(f"  objective trace: {len(result.trace)} points, "
      f"smallest step {steps.min():.2e} (near-monotone ascent)")

ari = adjusted_rand_index(labels, result.z.hard_labels())
print(f"\nagreement with the true partition: {ari:.4f}")
print("confusion (rows = truth, columns = predicted):")
print(contingency_table(labels, result.z.hard_labels()))
