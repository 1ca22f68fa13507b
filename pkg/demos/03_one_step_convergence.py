"""One-iteration convergence in the interpolation regime.

With the heterogeneity-scaled permutation sketch, the per-round curvature
equals the identity for every realization, so with step size 1 on a
problem with zero linear terms the iterate lands on the optimum after a
single round, for every seed.
"""

import numpy as np

from istlab import EstimatorKind, SketchKind, gen_heterogeneous
from istlab.runner import RunConfig, StepSchedule, run

print("n = 10 clients, d = 100 coordinates (10 per client), zero linear terms")
print()
print("seed   rel f-gap after 1 round")
for seed in range(8):
    p = gen_heterogeneous(10, 100, seed=seed).as_interpolation()
    cfg = RunConfig(
        problem=p,
        estimator=EstimatorKind.ist(SketchKind.scaled_perm_het()),
        schedule=StepSchedule.constant(1.0),
        K=1,
        seed=seed,
        metrics=("f_gap_rel_log",),
    )
    t = run(cfg)
    print(f"{seed:4d}   1e{t.metrics['f_gap_rel_log'][0, 1]:+.0f}")

print()
print("Contrast: plain distributed gradient descent needs the usual")
print("condition-number-many iterations on the same problems.")
p = gen_heterogeneous(10, 100, seed=0).as_interpolation()
lam = np.linalg.eigvalsh(p.L_bar)
cfg = RunConfig(
    problem=p,
    estimator=EstimatorKind.dgd(),
    schedule=StepSchedule.constant(1.0 / lam[-1]),
    K=200,
    seed=0,
    metrics=("f_gap_rel_log",),
)
t = run(cfg)
log_gap = t.metrics["f_gap_rel_log"][0]
rounds = int(np.argmax(log_gap <= -14.0))
print(f"DGD with gamma = 1/lambda_max (condition number {lam[-1] / lam[0]:.0f}) "
      f"needs {rounds} rounds to reach a 1e-14 gap; the scaled sketch needs 1.")
