"""LDF voltages and exact AC power flow by backward/forward sweep.

All routines accept a single injection vector of length N or a batch of
shape ``(T, N)``; batches are swept together, one vectorized operation per
bus.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DivergedVoltage, InvalidConfig, NoConvergence
from .feeder import FeederModel, SensitivityMatrices, path_sum, subtree_sum

__all__ = [
    "InjectionState",
    "VoltageState",
    "ldf_voltage",
    "ac_power_flow",
    "ac_sweep",
    "power_mismatch",
    "SANITY_BAND",
]

SANITY_BAND = (0.5, 1.5)


@dataclass(frozen=True)
class InjectionState:
    """Active/reactive nodal injections in p.u.; loads are negative."""

    p: np.ndarray
    q: np.ndarray
    max_abs: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape:
            raise DimensionMismatch(f"p has shape {p.shape} but q has shape {q.shape}")
        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise InvalidConfig("injections must be finite")
        big = max(np.abs(p).max(initial=0.0), np.abs(q).max(initial=0.0))
        if big > self.max_abs:
            raise InvalidConfig(f"injection magnitude {big:g} exceeds bound {self.max_abs:g} p.u.")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class VoltageState:
    v: np.ndarray


def _check_dims(feeder, inj):
    if inj.p.shape[-1] != feeder.n_buses:
        raise DimensionMismatch(
            f"injections have {inj.p.shape[-1]} buses, feeder has {feeder.n_buses}")


def ldf_voltage(feeder: FeederModel, sens: SensitivityMatrices | None, inj: InjectionState) -> VoltageState:
    """v = R p + X q + v0.

    Without ``sens`` the products are evaluated by two tree sweeps using the
    feeder's own r and x.
    """
    _check_dims(feeder, inj)
    if sens is None:
        drop = feeder.r * subtree_sum(feeder, inj.p) + feeder.x * subtree_sum(feeder, inj.q)
        return VoltageState(path_sum(feeder, drop) + feeder.v0)
    if sens.R.shape != (feeder.n_buses, feeder.n_buses):
        raise DimensionMismatch("sensitivity matrices do not match the feeder")
    return VoltageState(inj.p @ sens.R.T + inj.q @ sens.X.T + feeder.v0)


def power_mismatch(feeder: FeederModel, V: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Complex nodal power balance error ``V conj(I_inj) - s`` for non-reference buses."""
    zl = feeder.r + 1j * feeder.x
    V = np.asarray(V, dtype=complex)
    p = feeder.parent[1:]
    Vpar = np.where(p > 0, V[..., np.maximum(p - 1, 0)], feeder.v0)
    J = (Vpar - V) / zl                      # line current, parent -> child
    inj = -J.copy()                           # current leaving bus k into the network
    for k in range(1, feeder.n_buses + 1):
        pk = feeder.parent[k]
        if pk > 0:
            inj[..., pk - 1] += J[..., k - 1]
    return V * np.conj(inj) - s


def ac_sweep(feeder: FeederModel, inj: InjectionState, tol: float = 1e-10,
             max_iter: int = 100) -> tuple[np.ndarray, int]:
    """Complex bus voltages (reference bus excluded) and the number of sweeps used.

    Iterates until the power-mismatch infinity norm is at most ``tol``.
    """
    if not tol > 0:
        raise InvalidConfig("tol must be positive")
    _check_dims(feeder, inj)
    s = inj.p + 1j * inj.q
    zl = feeder.r + 1j * feeder.x
    V = np.full(s.shape, feeder.v0, dtype=complex)
    if not np.any(s):
        return V, 0
    lo, hi = SANITY_BAND
    for it in range(1, max_iter + 1):
        I_inj = np.conj(s / V)
        J = -subtree_sum(feeder, I_inj)
        V = feeder.v0 - path_sum(feeder, zl * J)
        mag = np.abs(V)
        if not np.isfinite(mag).all() or mag.min() <= lo or mag.max() >= hi:
            raise DivergedVoltage(f"voltage magnitude left {SANITY_BAND} at sweep {it}")
        if np.abs(power_mismatch(feeder, V, s)).max() <= tol:
            return V, it
    raise NoConvergence(f"backward/forward sweep did not reach tol={tol:g} in {max_iter} sweeps")


def ac_power_flow(feeder: FeederModel, inj: InjectionState, tol: float = 1e-10,
                  max_iter: int = 100) -> VoltageState:
    V, _ = ac_sweep(feeder, inj, tol, max_iter)
    return VoltageState(np.abs(V))
