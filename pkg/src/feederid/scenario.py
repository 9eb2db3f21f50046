"""Load time series, observability partitions and consecutive-difference datasets."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyObservedSet,
    InvalidConfig,
    NonNumericCell,
    RaggedRows,
    UnknownBusLabel,
)
from .feeder import FeederModel
from .powerflow import InjectionState, ac_power_flow, ldf_voltage

__all__ = [
    "LoadSeries",
    "ObservabilityPartition",
    "DifferenceDataset",
    "SparseChangeConfig",
    "synth_loads",
    "simulate_voltages",
    "generate_dataset",
    "difference_dataset",
    "make_partition",
    "write_series_csv",
    "read_series_csv",
    "ingest_csv",
    "TRUTH_MODES",
]

TRUTH_MODES = ("LDF", "AC")


@dataclass(frozen=True)
class LoadSeries:
    """``T + 1`` uniformly spaced samples of nodal injections, shape ``(T + 1, N)``."""

    p: np.ndarray
    q: np.ndarray
    times: np.ndarray = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.ndim != 2 or p.shape != q.shape:
            raise DimensionMismatch("p and q must be matching (T+1, N) arrays")
        times = np.arange(p.shape[0]) if self.times is None else np.asarray(self.times)
        if times.shape != (p.shape[0],):
            raise DimensionMismatch("one time stamp per sample is required")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "times", times)

    @property
    def n_samples(self) -> int:
        return self.p.shape[0]

    def differences(self) -> tuple[np.ndarray, np.ndarray]:
        return np.diff(self.p, axis=0), np.diff(self.q, axis=0)


@dataclass(frozen=True)
class ObservabilityPartition:
    """Bus ids are 1..N (internal indices).  ``voltage_observed`` defaults to ``observed``."""

    n_buses: int
    observed: tuple[int, ...]
    voltage_observed: tuple[int, ...] = None

    def __post_init__(self):
        obs = tuple(sorted(int(b) for b in self.observed))
        vobs = obs if self.voltage_observed is None else tuple(sorted(int(b) for b in self.voltage_observed))
        for ids in (obs, vobs):
            if len(set(ids)) != len(ids):
                raise InvalidConfig("duplicate bus in partition")
            if ids and (ids[0] < 1 or ids[-1] > self.n_buses):
                raise InvalidConfig(f"partition buses must lie in 1..{self.n_buses}")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "voltage_observed", vobs)

    @property
    def unobserved(self) -> tuple[int, ...]:
        o = set(self.observed)
        return tuple(b for b in range(1, self.n_buses + 1) if b not in o)

    # zero-based column indices into length-N bus vectors
    @property
    def obs_cols(self) -> np.ndarray:
        return np.asarray(self.observed, dtype=int) - 1

    @property
    def unobs_cols(self) -> np.ndarray:
        return np.asarray(self.unobserved, dtype=int) - 1

    @property
    def vobs_cols(self) -> np.ndarray:
        return np.asarray(self.voltage_observed, dtype=int) - 1

    @classmethod
    def full(cls, n_buses: int) -> "ObservabilityPartition":
        return cls(n_buses, tuple(range(1, n_buses + 1)))

    def to_dict(self, feeder: FeederModel) -> dict:
        return {"observed": [feeder.labels[b] for b in self.observed],
                "voltage_observed": [feeder.labels[b] for b in self.voltage_observed]}

    @classmethod
    def from_dict(cls, feeder: FeederModel, data: dict) -> "ObservabilityPartition":
        def ids(labels):
            out = []
            for lab in labels:
                try:
                    k = feeder.index_of(lab)
                except KeyError:
                    raise UnknownBusLabel(f"partition names unknown bus {lab!r}") from None
                if k == 0:
                    raise InvalidConfig("the reference bus cannot be part of the partition")
                out.append(k)
            return out
        obs = ids(data.get("observed", []))
        vobs = data.get("voltage_observed")
        return cls(feeder.n_buses, tuple(obs), None if vobs is None else tuple(ids(vobs)))


@dataclass(frozen=True)
class DifferenceDataset:
    """First differences ``x_t - x_{t-1}`` for t = 1..T, each of shape ``(T, N)``.

    Columns of unobserved buses may hold NaN (ingested field data); only the
    observed columns of ``dp``/``dq`` and the voltage-observed columns of
    ``dv`` are ever read by the estimator.
    """

    dv: np.ndarray
    dp: np.ndarray
    dq: np.ndarray
    partition: ObservabilityPartition

    def __post_init__(self):
        if not (self.dv.shape == self.dp.shape == self.dq.shape) or self.dv.ndim != 2:
            raise DimensionMismatch("dv, dp, dq must be matching (T, N) arrays")
        if self.dv.shape[1] != self.partition.n_buses:
            raise DimensionMismatch("partition size does not match the data")
        part = self.partition
        if not (np.isfinite(self.dp[:, part.obs_cols]).all()
                and np.isfinite(self.dq[:, part.obs_cols]).all()
                and np.isfinite(self.dv[:, part.vobs_cols]).all()):
            raise InvalidConfig("observed columns of the dataset contain non-finite values")

    @property
    def T(self) -> int:
        return self.dv.shape[0]

    def subset(self, rows) -> "DifferenceDataset":
        rows = np.asarray(rows)
        return DifferenceDataset(self.dv[rows], self.dp[rows], self.dq[rows], self.partition)

    def with_partition(self, partition: ObservabilityPartition) -> "DifferenceDataset":
        return DifferenceDataset(self.dv, self.dp, self.dq, partition)


@dataclass(frozen=True)
class SparseChangeConfig:
    """Generator settings for jointly sparse load changes.

    Each bus hosts a load with consumption in ``[0, load_max]``.  At each step,
    with probability ``change_prob``, the consumption jumps by a magnitude
    drawn uniformly from ``magnitude``; the sign is random unless that would
    leave the admissible range.  Reactive power moves with the same event at a
    power factor drawn from ``pf_range``.
    """

    change_prob: float = 0.05
    magnitude: tuple[float, float] = (0.01, 0.1)
    pf_range: tuple[float, float] = (0.9, 0.95)
    load_max: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.change_prob <= 1.0:
            raise InvalidConfig("change_prob must lie in [0, 1]")
        lo, hi = self.magnitude
        if not 0.0 <= lo <= hi:
            raise InvalidConfig("magnitude bounds must satisfy 0 <= lo <= hi")
        a, b = self.pf_range
        if not 0.0 < a <= b <= 1.0:
            raise InvalidConfig("pf_range must be a sub-interval of (0, 1]")
        if self.load_max < 2 * hi:
            raise InvalidConfig("load_max must be at least twice the largest change")


def _tanphi(pf):
    return np.tan(np.arccos(pf))


def synth_loads(feeder: FeederModel, cfg: SparseChangeConfig, T: int) -> LoadSeries:
    """Return T+1 samples of sparse-change loads (injections are negative consumption)."""
    if T < 2:
        raise InvalidConfig("T must be at least 2")
    rng = np.random.default_rng(cfg.seed)
    n = feeder.n_buses
    lo, hi = cfg.magnitude
    load = rng.uniform(0.0, cfg.load_max, n)
    qload = load * _tanphi(rng.uniform(*cfg.pf_range, n))
    events = rng.random((T, n)) < cfg.change_prob
    mags = rng.uniform(lo, hi, (T, n))
    signs = np.where(rng.random((T, n)) < 0.5, -1.0, 1.0)
    tans = _tanphi(rng.uniform(*cfg.pf_range, (T, n)))

    p = np.empty((T + 1, n))
    q = np.empty((T + 1, n))
    p[0], q[0] = -load, -qload
    for t in range(T):
        step = signs[t] * mags[t]
        out = (load + step < 0.0) | (load + step > cfg.load_max)
        step = np.where(out, -step, step)
        step = np.where(events[t], step, 0.0)
        load = load + step
        qload = qload + step * tans[t]
        p[t + 1], q[t + 1] = -load, -qload
    return LoadSeries(p, q)


def simulate_voltages(feeder: FeederModel, loads: LoadSeries, truth_mode: str = "AC",
                      tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Voltage magnitudes at every sample, shape ``(T + 1, N)``."""
    if loads.p.shape[1] != feeder.n_buses:
        raise DimensionMismatch("load series does not match the feeder size")
    inj = InjectionState(loads.p, loads.q, max_abs=np.inf)
    if truth_mode == "LDF":
        return ldf_voltage(feeder, None, inj).v
    if truth_mode == "AC":
        return ac_power_flow(feeder, inj, tol, max_iter).v
    raise InvalidConfig(f"truth_mode must be one of {TRUTH_MODES}")


def difference_dataset(loads: LoadSeries, v: np.ndarray,
                       partition: ObservabilityPartition) -> DifferenceDataset:
    dp, dq = loads.differences()
    return DifferenceDataset(np.diff(np.asarray(v, dtype=float), axis=0), dp, dq, partition)


def generate_dataset(feeder: FeederModel, loads: LoadSeries, partition: ObservabilityPartition,
                     truth_mode: str = "AC", noise_sigma: float = 0.0, seed=None) -> DifferenceDataset:
    """Simulate voltages per ``truth_mode`` (optionally with Gaussian noise) and difference them."""
    v = simulate_voltages(feeder, loads, truth_mode)
    if noise_sigma:
        v = v + np.random.default_rng(seed).normal(0.0, noise_sigma, v.shape)
    return difference_dataset(loads, v, partition)


def make_partition(feeder: FeederModel, *, fraction: float | None = None, observed=None,
                   seed=None, voltage_observed=None, always_observe_leaves: bool = False,
                   candidates=None) -> ObservabilityPartition:
    """Choose the observed bus set O.

    Exactly one selection rule applies:

    * ``observed`` given: explicit bus labels, validated against the feeder;
    * ``fraction`` given: ``ceil(fraction * n)`` buses out of the ``n``
      ``candidates`` (default all non-reference buses), uniformly at random.
      For a fixed seed larger fractions give supersets.  With
      ``always_observe_leaves`` the leaves are taken first and the remainder
      is drawn at random;
    * neither: all leaf buses.

    ``voltage_observed`` (labels, or ``"all"``) defaults to the observed set.
    """
    def to_ids(labels):
        ids = []
        for lab in labels:
            try:
                k = feeder.index_of(lab)
            except KeyError:
                raise UnknownBusLabel(f"unknown bus label {lab!r}") from None
            if k == 0:
                raise InvalidConfig("the reference bus cannot be observed as an injection bus")
            ids.append(k)
        return ids

    if observed is not None and fraction is not None:
        raise InvalidConfig("give either an explicit observed list or a fraction, not both")
    if observed is not None:
        obs = to_ids(observed)
    elif fraction is not None:
        if not 0.0 <= fraction <= 1.0:
            raise InvalidConfig("fraction must lie in [0, 1]")
        pool = list(range(1, feeder.n_buses + 1)) if candidates is None else to_ids(candidates)
        k = math.ceil(fraction * len(pool) - 1e-9)
        rng = np.random.default_rng(seed)
        order = [pool[i] for i in rng.permutation(len(pool))]
        if always_observe_leaves:
            leaves = set(feeder.leaves())
            order = [b for b in order if b in leaves] + [b for b in order if b not in leaves]
        obs = order[:k]
    else:
        obs = feeder.leaves()
    if not obs:
        raise EmptyObservedSet("the partition observes no bus")
    if isinstance(voltage_observed, str) and voltage_observed == "all":
        voltage_observed = feeder.labels[1:]
    vobs = None if voltage_observed is None else to_ids(voltage_observed)
    return ObservabilityPartition(feeder.n_buses, tuple(obs), None if vobs is None else tuple(vobs))


# CSV ------------------------------------------------------------------------------

def write_series_csv(path, feeder: FeederModel, values: np.ndarray, times=None) -> None:
    values = np.asarray(values, dtype=float)
    times = np.arange(values.shape[0]) if times is None else times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + list(feeder.labels[1:]))
        for t, row in zip(times, values):
            w.writerow([str(t)] + ["%.17g" % v for v in row])


def read_series_csv(path, feeder: FeederModel) -> tuple[np.ndarray, np.ndarray]:
    """Read one bus-by-column CSV; returns (times, values) with NaN for absent buses."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RaggedRows(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise RaggedRows(f"{path}: header needs a time column and at least one bus")
    cols = []
    for lab in header[1:]:
        try:
            k = feeder.index_of(lab)
        except KeyError:
            raise UnknownBusLabel(f"{path}: bus {lab!r} is not in the feeder") from None
        if k == 0:
            raise UnknownBusLabel(f"{path}: the reference bus {lab!r} carries no series")
        cols.append(k - 1)
    if len(set(cols)) != len(cols):
        raise UnknownBusLabel(f"{path}: duplicate bus column")
    body = rows[1:]
    times = []
    values = np.full((len(body), feeder.n_buses), np.nan)
    for i, row in enumerate(body, start=2):
        if len(row) != len(header) or any(c.strip() == "" for c in row):
            raise RaggedRows(f"{path}: line {i} has missing or extra cells")
        times.append(row[0].strip())
        try:
            values[i - 2, cols] = [float(c) for c in row[1:]]
        except ValueError:
            raise NonNumericCell(f"{path}: line {i} has a non-numeric cell") from None
    if not np.isfinite(values[:, cols]).all():
        raise NonNumericCell(f"{path}: non-finite value")
    return np.asarray(times), values


def ingest_csv(path_p, path_q, path_v, feeder: FeederModel) -> tuple[LoadSeries, np.ndarray]:
    """Read p/q/v CSV files (header ``t,<bus labels...>``, one row per time stamp).

    The three files must share identical time stamps.
    """
    tp, p = read_series_csv(path_p, feeder)
    tq, q = read_series_csv(path_q, feeder)
    tv, v = read_series_csv(path_v, feeder)
    if not (np.array_equal(tp, tq) and np.array_equal(tp, tv)):
        raise RaggedRows("p, q and v files do not share the same time stamps")
    try:
        times = tp.astype(int)
    except ValueError:
        times = tp
    return LoadSeries(p, q, times), v
