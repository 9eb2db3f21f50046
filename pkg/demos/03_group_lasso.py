"""Recovering sparse unobserved load changes with the group Lasso.

With the line parameters known, each time step is a small group Lasso over
the unobserved buses.  Larger lambda keeps fewer buses active.  At tiny
lambda the nearly collinear p and q columns of a bus trade off freely, which
shows up as large phantom changes.
"""
import numpy as np

from feederid.estimator import EstimationProblem
from feederid.feeder import random_feeder
from feederid.scenario import SparseChangeConfig, generate_dataset, make_partition, synth_loads

f = random_feeder(20, 3, extend_prob=0.5)
loads = synth_loads(f, SparseChangeConfig(change_prob=0.05, seed=3), 300)
part = make_partition(f, fraction=0.5, seed=3, always_observe_leaves=True, voltage_observed="all")
prob = EstimationProblem(generate_dataset(f, loads, part, "LDF"), f)

true = np.column_stack([prob.dataset.dp[:, prob.ucols], prob.dataset.dq[:, prob.ucols]])
true_on = np.abs(true[:, :len(prob.ucols)]) > 0
print(f"{true_on.sum()} true changes at {len(prob.ucols)} unobserved buses over {prob.T} steps")
print("  lambda   active groups   hits   phantoms   largest phantom")
for lam in (1e-9, 1e-8, 1e-7, 1e-6):
    S, _, _ = prob.recover(f.x, lam)
    on = np.hypot(S[:, 0::2], S[:, 1::2]) > 0
    mag = np.hypot(S[:, 0::2], S[:, 1::2])
    worst = mag[on & ~true_on].max(initial=0.0)
    print(f"{lam:8.0e} {on.sum():15d} {(on & true_on).sum():6d} {(on & ~true_on).sum():10d} {worst:17.1e}")
