"""Regression matrices ``A(s)`` mapping line parameters to voltage differences.

For an injection difference ``s = [p; q]`` the LDF difference model reads
``R(r) p + X(x) q = A(s) theta``.  Writing ``P = M^{-T}`` (root-path
indicator) and ``a = M^{-1} p``, ``b = M^{-1} q`` (subtree sums),

* FULL, ``theta = [r; x]``:       ``A(s) = [P diag(a), P diag(b)]``
* RATIO_FIXED, ``theta = x``:     ``A(s) = P diag(z * a + b)``  (``r = z * x``)

Only the rows of voltage-observed buses are kept.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, MissingRatios
from .feeder import FeederModel, path_matrix, subtree_sum

__all__ = [
    "MODES",
    "RegressionOperator",
    "assemble_A",
    "split_A",
    "numerical_rank",
    "stacked_singular_values",
    "RANK_RTOL",
]

MODES = ("FULL", "RATIO_FIXED")
RANK_RTOL = 1e-8


class RegressionOperator:
    """Builds and applies ``A(s)`` for one feeder, mode and set of voltage rows.

    ``rows`` are zero-based bus columns (bus id minus one); default all buses.
    """

    def __init__(self, feeder: FeederModel, mode: str = "RATIO_FIXED", z=None, rows=None):
        if mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {mode!r}")
        self.feeder = feeder
        self.mode = mode
        if mode == "RATIO_FIXED":
            z = feeder.z if z is None else np.asarray(z, dtype=float)
            if z is None:
                raise MissingRatios("RATIO_FIXED mode needs r-to-x ratios")
            if z.shape != (feeder.n_lines,) or (z < 0).any():
                raise MissingRatios("ratios must be a non-negative vector of length L")
        self.z = z
        self.P = path_matrix(feeder)
        self.rows = np.arange(feeder.n_buses) if rows is None else np.asarray(rows, dtype=int)
        self.K = self.P[self.rows]
        self._KtK = self.K.T @ self.K

    @property
    def n_params(self) -> int:
        L = self.feeder.n_lines
        return 2 * L if self.mode == "FULL" else L

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def split_theta(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """(r, x) implied by a parameter vector of this mode."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionMismatch(f"theta must have length {self.n_params}")
        if self.mode == "FULL":
            L = self.feeder.n_lines
            return theta[:L], theta[L:]
        return self.z * theta, theta

    def true_theta(self, feeder: FeederModel | None = None) -> np.ndarray:
        f = feeder or self.feeder
        return f.theta_full if self.mode == "FULL" else f.x.copy()

    def _check(self, dp, dq):
        dp = np.asarray(dp, dtype=float)
        dq = np.asarray(dq, dtype=float)
        if dp.shape != dq.shape or dp.shape[-1] != self.feeder.n_buses:
            raise DimensionMismatch(f"injection differences must end in length {self.feeder.n_buses}")
        return dp, dq

    def weights(self, dp, dq) -> np.ndarray:
        """Per-line column weights; shape ``(..., n_params)``."""
        dp, dq = self._check(dp, dq)
        a = subtree_sum(self.feeder, dp)
        b = subtree_sum(self.feeder, dq)
        if self.mode == "FULL":
            return np.concatenate([a, b], axis=-1)
        return self.z * a + b

    def assemble(self, dp_t, dq_t) -> np.ndarray:
        """Dense ``A(s_t)`` for a single time step, shape ``(n_rows, n_params)``."""
        w = self.weights(dp_t, dq_t)
        if w.ndim != 1:
            raise DimensionMismatch("assemble takes one time step; use weights() for batches")
        if self.mode == "FULL":
            return np.hstack([self.K, self.K]) * w
        return self.K * w

    def predict(self, theta, dp, dq) -> np.ndarray:
        """``A(s_t) theta`` for every step of a batch; shape ``(..., n_rows)``."""
        dp, dq = self._check(dp, dq)
        r, x = self.split_theta(theta)
        drop = r * subtree_sum(self.feeder, dp) + x * subtree_sum(self.feeder, dq)
        return drop @ self.K.T

    def normal_equations(self, dp, dq, dv_rows) -> tuple[np.ndarray, np.ndarray]:
        """``(1/T) sum A_t^T A_t`` and ``(1/T) sum A_t^T dv_t`` without forming any ``A_t``."""
        W = np.atleast_2d(self.weights(dp, dq))
        dv_rows = np.atleast_2d(np.asarray(dv_rows, dtype=float))
        if dv_rows.shape != (W.shape[0], self.n_rows):
            raise DimensionMismatch("voltage rows do not match injections / row selection")
        T = W.shape[0]
        Y = dv_rows @ self.K
        if self.mode == "FULL":
            KtK = np.block([[self._KtK, self._KtK], [self._KtK, self._KtK]])
            Y = np.hstack([Y, Y])
        else:
            KtK = self._KtK
        G = KtK * (W.T @ W) / T
        h = (W * Y).sum(axis=0) / T
        return G, h

    def injection_block(self, theta, cols) -> np.ndarray:
        """Matrix mapping paired injections ``[p_n, q_n]`` at bus columns ``cols`` to voltage rows.

        Column ``2j`` carries ``p`` and ``2j + 1`` carries ``q`` of ``cols[j]``,
        i.e. the rows/columns of ``[R(r), X(x)]`` restricted to the voltage rows
        and ``cols``.
        """
        r, x = self.split_theta(theta)
        Pc = self.P[np.asarray(cols, dtype=int)]
        B = np.empty((self.n_rows, 2 * len(Pc)))
        B[:, 0::2] = (self.K * r) @ Pc.T
        B[:, 1::2] = (self.K * x) @ Pc.T
        return B


def assemble_A(feeder: FeederModel, dp_t, dq_t, mode: str = "FULL", z=None, rows=None) -> np.ndarray:
    return RegressionOperator(feeder, mode, z, rows).assemble(dp_t, dq_t)


def split_A(op: RegressionOperator, dp_t, dq_t, observed_cols) -> tuple[np.ndarray, np.ndarray]:
    """``(A(s^O), A(s^U))``: the regression matrix of the observed and unobserved parts of ``s``."""
    dp_t, dq_t = op._check(dp_t, dq_t)
    mask = np.zeros(op.feeder.n_buses, dtype=bool)
    mask[np.asarray(observed_cols, dtype=int)] = True
    A_O = op.assemble(np.where(mask, dp_t, 0.0), np.where(mask, dq_t, 0.0))
    A_U = op.assemble(np.where(mask, 0.0, dp_t), np.where(mask, 0.0, dq_t))
    return A_O, A_U


def stacked_singular_values(op: RegressionOperator, dp, dq, chunk: int = 64) -> np.ndarray:
    """Singular values of ``[A(s_1); ...; A(s_T)]`` via a running QR, never holding the full stack."""
    W = np.atleast_2d(op.weights(dp, dq))
    Kb = np.hstack([op.K, op.K]) if op.mode == "FULL" else op.K
    Rf = np.zeros((0, op.n_params))
    for start in range(0, W.shape[0], chunk):
        blk = (Kb[None, :, :] * W[start:start + chunk, None, :]).reshape(-1, op.n_params)
        Rf = np.linalg.qr(np.vstack([Rf, blk]), mode="r")
    return np.linalg.svd(Rf, compute_uv=False)


def numerical_rank(A=None, *, singular_values=None, rtol: float = RANK_RTOL) -> int:
    """Count singular values above ``rtol * sigma_max``."""
    s = np.linalg.svd(np.atleast_2d(A), compute_uv=False) if singular_values is None else np.asarray(singular_values)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > rtol * s.max()).sum())
