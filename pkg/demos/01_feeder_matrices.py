"""Sensitivity matrices of a radial feeder.

Entry (i, j) of R and X is the impedance shared by the root paths of buses i
and j.  This script builds the bundled 12-bus feeder, prints one row of X and
checks it against the dense incidence-matrix formula.
"""
import numpy as np

from feederid.feeder import incidence, load_bundled, sensitivity_matrices

f = load_bundled("radial12")
S = sensitivity_matrices(f)
print(f"{f.n_buses} buses, leaves: {[f.labels[b] for b in f.leaves()]}")

b = f.index_of("12")
row = S.X[b - 1]
print("X row for bus 12:", np.round(row, 4))
print("reactance on the root path of bus 12:", round(row[b - 1], 4))

Minv = np.linalg.inv(incidence(f))
dense = Minv.T @ np.diag(f.x) @ Minv
print("max |tree sweep - dense| =", np.abs(S.X - dense).max())
