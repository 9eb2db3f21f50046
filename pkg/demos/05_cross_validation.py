"""Choosing (lambda, alpha) by 5-fold cross validation over time steps.

The score is the held-out voltage fitting error, so no ground truth is
needed.  The true reactances are used afterwards only to report TVE.
"""
import warnings

from feederid.errors import MaxItersExceeded
from feederid.estimator import Hyperparameters, am_solve, cross_validate
from feederid.feeder import random_feeder
from feederid.scenario import SparseChangeConfig, generate_dataset, make_partition, synth_loads

warnings.simplefilter("ignore", MaxItersExceeded)
f = random_feeder(15, 21, extend_prob=0.5)
loads = synth_loads(f, SparseChangeConfig(seed=21), 400)
part = make_partition(f, fraction=0.5, seed=21, always_observe_leaves=True, voltage_observed="all")
ds = generate_dataset(f, loads, part, "AC")

hp = Hyperparameters(max_am_iters=30, max_inner_iters=100)
cv = cross_validate(ds, f, lambda_grid=[1e-8, 1e-7, 1e-6], alpha_grid=[1e-6, 1e-5], K=5, hp=hp)
print("  lambda    alpha   mean held-out score")
for row in cv.table:
    print(f"{row['lambda']:8.0e} {row['alpha']:8.0e} {row['mean']:14.4e}")

best = Hyperparameters(lam=cv.lam, alpha=cv.alpha, max_am_iters=30, max_inner_iters=100)
rep = am_solve(ds, f, hp=best, truth=f).report
print(f"selected lambda={cv.lam:g}, alpha={cv.alpha:g}: AM TVE {rep.tve:.3f}, ZI TVE {rep.tve_zi:.3f}")
