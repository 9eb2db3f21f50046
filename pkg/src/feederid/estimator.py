"""Line parameter estimation under partial observability.

The estimator minimizes

    (1/T) sum_t [ ||dv_t^O - A(s_t^O) theta - A(s_t^U) theta||^2 + lam ||s_t^U||_G ] + alpha ||theta||^2

over the line parameters ``theta`` and the unobserved injection differences
``s_t^U`` by alternating minimization.  The ``s`` step is a group Lasso per
time step, solved by block coordinate descent with exact two-dimensional
group updates; the ``theta`` step is a ridge regression in closed form.  The
zero-injection (ZI) estimate, which fixes ``s^U = 0``, is the starting point.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import linalg

from ._bcd import solve_batch

from .errors import (
    EmptyFold,
    InvalidConfig,
    MaxItersExceeded,
    MonotonicityViolation,
    SingularNormalMatrix,
)
from .feeder import FeederModel
from .powerflow import InjectionState, ac_power_flow
from .regression import RegressionOperator, numerical_rank, stacked_singular_values
from .scenario import DifferenceDataset, LoadSeries

__all__ = [
    "Hyperparameters",
    "GroupLassoResult",
    "AmState",
    "EstimateReport",
    "AmResult",
    "CVResult",
    "EstimationProblem",
    "group_lasso_solve",
    "group_lasso_objective",
    "zi_estimate",
    "theta_update",
    "am_solve",
    "cross_validate",
    "validate_voltage",
    "tve",
    "MONOTONE_SLACK",
]

MONOTONE_SLACK = 1e-9
_CV_TIE = 1e-12


@dataclass(frozen=True)
class Hyperparameters:
    lam: float = 1e-7
    alpha: float = 1e-5
    epsilon: float = 1e-8
    max_am_iters: int = 100
    inner_tol: float = 1e-10
    max_inner_iters: int = 500

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidConfig("lambda must be non-negative")
        if not self.alpha > 0:
            raise InvalidConfig("alpha must be positive so that G is invertible")
        if not (self.epsilon > 0 and self.inner_tol > 0):
            raise InvalidConfig("stopping thresholds must be positive")
        if self.max_am_iters < 1 or self.max_inner_iters < 1:
            raise InvalidConfig("iteration caps must be at least 1")


# group Lasso ------------------------------------------------------------------------

@dataclass
class GroupLassoResult:
    s: np.ndarray          # (2g,) paired [p_1, q_1, p_2, q_2, ...], or (T, 2g) for batches
    converged: bool | np.ndarray
    sweeps: int


def group_lasso_objective(B, c, s, lam) -> float | np.ndarray:
    """``||c - B s||^2 + lam * sum_n ||s_n||``; batched over leading axes of ``c`` and ``s``."""
    B = np.asarray(B, dtype=float)
    s = np.asarray(s, dtype=float)
    res = np.asarray(c, dtype=float) - s @ B.T
    fit = (res ** 2).sum(axis=-1)
    norms = np.linalg.norm(s.reshape(s.shape[:-1] + (-1, 2)), axis=-1).sum(axis=-1)
    return fit + (lam * norms if norms.any() else 0.0)


def _bcd(B, C, lam, tol, max_iters, S0=None, threads=1):
    if threads > 1:
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    return solve_batch(B, C, lam, tol, max_iters, S0)


def group_lasso_solve(B, c, lam, tol: float = 1e-10, max_iters: int = 500, s0=None) -> GroupLassoResult:
    """Minimize ``||c - B s||^2 + lam * sum_n ||[s_{2n}, s_{2n+1}]||_2``.

    Columns of ``B`` come in (p, q) pairs, one pair per group.  A 2-D ``c``
    solves one problem per row.  Hitting ``max_iters`` emits a
    :class:`MaxItersExceeded` warning and returns the last iterate.
    """
    if not lam >= 0:
        raise InvalidConfig("lambda must be non-negative")
    B = np.asarray(B, dtype=float)
    if B.shape[1] % 2:
        raise InvalidConfig("B must have an even number of columns")
    c = np.asarray(c, dtype=float)
    single = c.ndim == 1
    C = np.atleast_2d(c)
    S0 = None if s0 is None else np.atleast_2d(np.asarray(s0, dtype=float))
    S, done, sweeps = _bcd(B, C, lam, tol, max_iters, S0)
    if not done.all():
        warnings.warn(MaxItersExceeded(f"group Lasso BCD stopped after {max_iters} sweeps"))
    if single:
        return GroupLassoResult(S[0], bool(done[0]), int(sweeps[0]))
    return GroupLassoResult(S, done, int(sweeps.max()))


# problem data ------------------------------------------------------------------------

class EstimationProblem:
    """Regression data of one dataset: observed voltage rows and observed injections.

    ``S`` arrays hold unobserved injection differences with shape
    ``(T, 2 |U|)``, paired per unobserved bus as ``[p, q]``.
    """

    def __init__(self, dataset: DifferenceDataset, feeder: FeederModel,
                 mode: str = "RATIO_FIXED", z=None):
        part = dataset.partition
        if part.n_buses != feeder.n_buses:
            raise InvalidConfig("dataset and feeder sizes differ")
        self.dataset = dataset
        self.feeder = feeder
        self.op = RegressionOperator(feeder, mode, z, rows=part.vobs_cols)
        self.ocols = part.obs_cols
        self.ucols = part.unobs_cols
        self.dv = dataset.dv[:, part.vobs_cols]
        self.dp_o = np.zeros_like(dataset.dp)
        self.dq_o = np.zeros_like(dataset.dq)
        self.dp_o[:, self.ocols] = dataset.dp[:, self.ocols]
        self.dq_o[:, self.ocols] = dataset.dq[:, self.ocols]

    @property
    def T(self) -> int:
        return self.dv.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.ucols)

    def zeros(self) -> np.ndarray:
        return np.zeros((self.T, 2 * self.n_groups))

    def totals(self, S) -> tuple[np.ndarray, np.ndarray]:
        dp = self.dp_o.copy()
        dq = self.dq_o.copy()
        if self.n_groups:
            dp[:, self.ucols] = S[:, 0::2]
            dq[:, self.ucols] = S[:, 1::2]
        return dp, dq

    def normal_matrix(self, S, alpha):
        G, h = self.op.normal_equations(*self.totals(S), self.dv)
        G[np.diag_indices_from(G)] += alpha
        return G, h

    def solve_theta(self, S, alpha) -> np.ndarray:
        G, h = self.normal_matrix(S, alpha)
        if alpha <= 0:
            ev = np.linalg.eigvalsh(G)
            if ev.min() <= 1e-12 * max(ev.max(), np.finfo(float).tiny):
                raise SingularNormalMatrix("normal matrix is singular; use alpha > 0")
        try:
            return linalg.cho_solve(linalg.cho_factor(G), h)
        except linalg.LinAlgError as e:
            raise SingularNormalMatrix(str(e)) from e

    def targets(self, theta) -> np.ndarray:
        """``dv^O - A(s^O) theta`` for every step."""
        return self.dv - self.op.predict(theta, self.dp_o, self.dq_o)

    def block(self, theta) -> np.ndarray:
        return self.op.injection_block(theta, self.ucols)

    def recover(self, theta, lam, tol=1e-10, max_iters=500, S0=None, threads=1):
        """Per-step group Lasso for the unobserved injections at fixed ``theta``."""
        if not self.n_groups:
            return self.zeros(), True, 0
        S, done, sweeps = _bcd(self.block(theta), self.targets(theta), lam, tol, max_iters, S0, threads)
        return S, bool(done.all()), int(sweeps.max())

    def residuals(self, theta, S) -> np.ndarray:
        return self.dv - self.op.predict(theta, *self.totals(S))

    def objective(self, theta, S, lam, alpha) -> float:
        fit = (self.residuals(theta, S) ** 2).sum() / self.T
        pen = 0.0
        if self.n_groups and lam > 0:
            norms = np.hypot(S[:, 0::2], S[:, 1::2]).sum()
            if norms:
                pen = lam * norms / self.T
        return float(fit + pen + alpha * np.dot(theta, theta))


# public estimation API --------------------------------------------------------------

def tve(estimate, truth) -> float:
    """Total vector error ``||est - truth|| / ||truth||``."""
    truth = np.asarray(truth, dtype=float)
    return float(np.linalg.norm(np.asarray(estimate, dtype=float) - truth) / np.linalg.norm(truth))


def zi_estimate(dataset: DifferenceDataset, feeder: FeederModel, mode: str = "RATIO_FIXED",
                alpha: float = 1e-5, z=None) -> np.ndarray:
    """Zero-injection estimate: ridge regression with all unobserved changes set to zero.

    ``alpha = 0`` is allowed and raises :class:`SingularNormalMatrix` when the
    data do not identify every parameter.
    """
    if dataset.T < 1:
        raise InvalidConfig("dataset is empty")
    prob = EstimationProblem(dataset, feeder, mode, z)
    return prob.solve_theta(prob.zeros(), alpha)


def theta_update(dataset: DifferenceDataset, feeder: FeederModel, s_u, alpha: float,
                 mode: str = "RATIO_FIXED", z=None) -> np.ndarray:
    """Closed-form ridge update ``theta = G^{-1} h`` for given unobserved differences ``s_u``."""
    if not alpha > 0:
        raise InvalidConfig("alpha must be positive")
    prob = EstimationProblem(dataset, feeder, mode, z)
    S = np.asarray(s_u, dtype=float)
    if not prob.n_groups and S.size == 0:
        S = prob.zeros()
    if S.shape != (prob.T, 2 * prob.n_groups):
        raise InvalidConfig("s_u must have shape (T, 2|U|)")
    return prob.solve_theta(S, alpha)


@dataclass
class AmState:
    iter: int
    theta: np.ndarray
    s_u: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False


@dataclass
class EstimateReport:
    theta_hat: np.ndarray
    theta_zi: np.ndarray
    mode: str
    lam: float
    alpha: float
    iterations: int
    converged: bool
    objective_trace: list[float]
    timings: list[float]
    group_sparsity_per_t: list[int]
    regression_rank: int
    tve: float | None = None
    tve_zi: float | None = None
    inner_sweeps: list[int] = field(default_factory=list)

    def reactance(self, feeder: FeederModel) -> tuple[np.ndarray, np.ndarray]:
        """(AM, ZI) reactance estimates."""
        L = feeder.n_lines
        if self.mode == "FULL":
            return self.theta_hat[L:], self.theta_zi[L:]
        return self.theta_hat, self.theta_zi

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta_hat],
            "theta_zi": [float(v) for v in self.theta_zi],
            "mode": self.mode,
            "tve": self.tve,
            "tve_zi": self.tve_zi,
            "iterations": self.iterations,
            "converged": self.converged,
            "objective_trace": [float(v) for v in self.objective_trace],
            "lambda": self.lam,
            "alpha": self.alpha,
            "group_sparsity_per_t": [int(v) for v in self.group_sparsity_per_t],
            "regression_rank": self.regression_rank,
        }


@dataclass
class AmResult:
    state: AmState
    report: EstimateReport


def _truth_x(feeder, truth):
    if truth is None:
        return None
    return truth.x if isinstance(truth, FeederModel) else np.asarray(truth, dtype=float)


def am_solve(dataset: DifferenceDataset, feeder: FeederModel, mode: str = "RATIO_FIXED",
             hp: Hyperparameters = Hyperparameters(), z=None, truth=None,
             threads: int = 1, strict: bool = False, rank_diagnostic: bool = True) -> AmResult:
    """Alternating minimization started from the ZI solution.

    ``truth`` (true reactances, or a feeder carrying them) enables TVE
    reporting.  The objective is recorded after every half step and must not
    rise by more than :data:`MONOTONE_SLACK`, otherwise
    :class:`MonotonicityViolation` is raised.  Running out of iterations warns
    with :class:`MaxItersExceeded`, or raises it when ``strict``.
    """
    prob = EstimationProblem(dataset, feeder, mode, z)
    lam, alpha = hp.lam, hp.alpha
    S = prob.zeros()
    theta = prob.solve_theta(S, alpha)
    theta_zi = theta.copy()
    trace = [prob.objective(theta, S, lam, alpha)]
    timings = []
    sweeps_log = []

    def record(value):
        if value > trace[-1] + MONOTONE_SLACK:
            raise MonotonicityViolation(
                f"objective rose from {trace[-1]:.6e} to {value:.6e} at iteration {it}")
        trace.append(value)

    converged = False
    it = 0
    while it < hp.max_am_iters:
        it += 1
        t0 = time.perf_counter()
        S, inner_ok, sweeps = prob.recover(theta, lam, hp.inner_tol, hp.max_inner_iters, S, threads)
        if not inner_ok:
            warnings.warn(MaxItersExceeded(
                f"group Lasso BCD hit {hp.max_inner_iters} sweeps at AM iteration {it}"))
        sweeps_log.append(sweeps)
        record(prob.objective(theta, S, lam, alpha))
        new = prob.solve_theta(S, alpha)
        record(prob.objective(new, S, lam, alpha))
        step = np.linalg.norm(new - theta)
        theta = new
        timings.append(time.perf_counter() - t0)
        if step < hp.epsilon:
            converged = True
            break
    if not converged:
        msg = f"AM did not reach epsilon={hp.epsilon:g} in {hp.max_am_iters} iterations"
        if strict:
            raise MaxItersExceeded(msg)
        warnings.warn(MaxItersExceeded(msg))

    nz = (np.hypot(S[:, 0::2], S[:, 1::2]) > 0).sum(axis=1) if prob.n_groups else np.zeros(prob.T, int)
    rank = -1
    if rank_diagnostic:
        sv = stacked_singular_values(prob.op, *prob.totals(S))
        rank = numerical_rank(singular_values=sv)
    x_true = _truth_x(feeder, truth)
    report = EstimateReport(theta, theta_zi, mode, lam, alpha, it, converged, trace, timings,
                            nz.tolist(), rank, inner_sweeps=sweeps_log)
    if x_true is not None:
        x_am, x_zi = report.reactance(feeder)
        report.tve = tve(x_am, x_true)
        report.tve_zi = tve(x_zi, x_true)
    state = AmState(it, theta, S, trace, converged)
    return AmResult(state, report)


# cross validation ---------------------------------------------------------------------

@dataclass
class CVResult:
    lam: float
    alpha: float
    table: list[dict]
    folds: list[np.ndarray]


def _fold_split(T, K, seed):
    if K < 2:
        raise InvalidConfig("K must be at least 2")
    if T < K:
        raise EmptyFold(f"cannot split {T} samples into {K} non-empty folds")
    perm = np.random.default_rng(seed).permutation(T)
    return [np.sort(f) for f in np.array_split(perm, K)]


def holdout_score(dataset: DifferenceDataset, feeder: FeederModel, theta, lam: float,
                  mode: str = "RATIO_FIXED", z=None, tol=1e-10, max_iters=500, threads=1) -> float:
    """Mean squared observed-voltage-difference error on ``dataset``.

    Unobserved injections of the held-out steps are re-estimated by the group
    Lasso at the given ``theta``.
    """
    prob = EstimationProblem(dataset, feeder, mode, z)
    S, _, _ = prob.recover(theta, lam, tol, max_iters, None, threads)
    res = prob.residuals(theta, S)
    return float((res ** 2).mean())


def cross_validate(dataset: DifferenceDataset, feeder: FeederModel, mode: str = "RATIO_FIXED",
                   lambda_grid=(1e-7,), alpha_grid=(1e-5,), K: int = 5, seed=0,
                   hp: Hyperparameters = Hyperparameters(), z=None, threads: int = 1) -> CVResult:
    """K-fold cross validation over time steps for (lambda, alpha).

    Selection takes the smallest mean held-out score; scores within 1e-12 of
    the best are broken by smallest lambda, then smallest alpha.
    """
    lambda_grid = list(lambda_grid)
    alpha_grid = list(alpha_grid)
    if not lambda_grid or not alpha_grid:
        raise InvalidConfig("hyperparameter grids must be non-empty")
    folds = _fold_split(dataset.T, K, seed)
    table = []
    for lam in lambda_grid:
        for alpha in alpha_grid:
            h = replace(hp, lam=float(lam), alpha=float(alpha))
            scores = []
            for k, fold in enumerate(folds):
                train = np.concatenate([f for j, f in enumerate(folds) if j != k])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", MaxItersExceeded)
                    fit = am_solve(dataset.subset(train), feeder, mode, h, z,
                                   threads=threads, rank_diagnostic=False)
                scores.append(holdout_score(dataset.subset(fold), feeder, fit.state.theta, h.lam,
                                            mode, z, h.inner_tol, h.max_inner_iters, threads))
            table.append({"lambda": float(lam), "alpha": float(alpha),
                          "fold_scores": scores, "mean": float(np.mean(scores))})
    best = min(row["mean"] for row in table)
    tied = [row for row in table if row["mean"] <= best + _CV_TIE]
    pick = min(tied, key=lambda row: (row["lambda"], row["alpha"]))
    return CVResult(pick["lambda"], pick["alpha"], table, folds)


# voltage validation ----------------------------------------------------------------------

def feeder_from_theta(feeder: FeederModel, theta, mode: str = "RATIO_FIXED", z=None) -> FeederModel:
    op = RegressionOperator(feeder, mode, z)
    r, x = op.split_theta(theta)
    return feeder.with_parameters(r, x)


def validate_voltage(theta_hat, feeder: FeederModel, holdout_loads: LoadSeries,
                     mode: str = "RATIO_FIXED", z=None, tol: float = 1e-10,
                     max_iter: int = 100) -> np.ndarray:
    """Normalized AC voltage prediction error ``||v_hat_t - v_t|| / ||v_t||`` for t = 1..T.

    ``v_t`` uses the feeder's own (true) parameters, ``v_hat_t`` the estimate.
    """
    est = feeder_from_theta(feeder, theta_hat, mode, z)
    dead = np.flatnonzero((est.r == 0) & (est.x == 0))
    if dead.size:
        raise InvalidConfig(f"estimate gives lines {(dead + 1).tolist()} zero impedance; "
                            "they have no voltage-observed bus downstream")
    inj = InjectionState(holdout_loads.p[1:], holdout_loads.q[1:], max_abs=np.inf)
    v = ac_power_flow(feeder, inj, tol, max_iter).v
    v_hat = ac_power_flow(est, inj, tol, max_iter).v
    return np.linalg.norm(v_hat - v, axis=1) / np.linalg.norm(v, axis=1)
