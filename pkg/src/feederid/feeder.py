"""Radial feeder graphs and the graph matrices of the linearized DistFlow model.

Buses are re-indexed breadth-first from the reference bus, so bus 0 is the
reference, every parent has a smaller index than its children, and line
``k - 1`` is the unique line ending at bus ``k``.  With this ordering the
reduced incidence matrix is unit upper-triangular and both ``M^{-1}`` and
``M^{-T}`` act as single O(N) tree sweeps.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    Disconnected,
    DuplicateLine,
    FeederError,
    NonPositiveReactance,
    SingularIncidence,
)

__all__ = [
    "LineSegment",
    "FeederModel",
    "SensitivityMatrices",
    "build_feeder",
    "feeder_from_dict",
    "load_feeder",
    "save_feeder",
    "load_bundled",
    "BUNDLED_FEEDERS",
    "incidence",
    "path_matrix",
    "subtree_sum",
    "path_sum",
    "sensitivity_matrices",
    "condition_number",
    "random_feeder",
]

BUNDLED_FEEDERS = ("ieee123", "radial12")

_RATIO_TOL = 1e-12
_AGREE_RTOL = 1e-10


@dataclass(frozen=True)
class LineSegment:
    from_bus: str
    to_bus: str
    r: float
    x: float
    z_ratio: float | None = None
    id: int | None = None


@dataclass(frozen=True, eq=False)
class FeederModel:
    """Validated radial feeder.

    ``labels[k]`` is the external name of internal bus ``k``; ``parent[k]`` is
    the upstream bus of ``k`` (``parent[0] == -1``).  ``r``, ``x`` and the
    optional r-to-x ratios ``z`` are indexed by line, line ``k - 1`` feeding
    bus ``k``.
    """

    labels: tuple[str, ...]
    parent: np.ndarray
    r: np.ndarray
    x: np.ndarray
    z: np.ndarray | None = None
    v0: float = 1.0

    def __post_init__(self):
        for arr in (self.parent, self.r, self.x, self.z):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_buses(self) -> int:
        """Number of non-reference buses N."""
        return len(self.labels) - 1

    @property
    def n_lines(self) -> int:
        return len(self.r)

    @property
    def from_bus(self) -> np.ndarray:
        return self.parent[1:]

    @property
    def to_bus(self) -> np.ndarray:
        return np.arange(1, self.n_buses + 1)

    @property
    def theta_full(self) -> np.ndarray:
        return np.concatenate([self.r, self.x])

    def index_of(self, label) -> int:
        try:
            return self._label_index[str(label)]
        except KeyError:
            raise KeyError(f"unknown bus label {label!r}") from None

    @property
    def _label_index(self) -> dict[str, int]:
        cache = self.__dict__.get("_idx_cache")
        if cache is None:
            cache = {lab: k for k, lab in enumerate(self.labels)}
            object.__setattr__(self, "_idx_cache", cache)
        return cache

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in self.labels]
        for k in range(1, len(self.labels)):
            kids[self.parent[k]].append(k)
        return kids

    def leaves(self) -> list[int]:
        """Non-reference buses of degree one."""
        has_child = np.zeros(len(self.labels), dtype=bool)
        has_child[self.parent[1:]] = True
        return [k for k in range(1, len(self.labels)) if not has_child[k]]

    def depth(self) -> np.ndarray:
        d = np.zeros(len(self.labels), dtype=int)
        for k in range(1, len(self.labels)):
            d[k] = d[self.parent[k]] + 1
        return d

    def lines(self) -> list[LineSegment]:
        z = self.z if self.z is not None else [None] * self.n_lines
        return [
            LineSegment(self.labels[self.parent[k + 1]], self.labels[k + 1],
                        float(self.r[k]), float(self.x[k]),
                        None if z[k] is None else float(z[k]), k + 1)
            for k in range(self.n_lines)
        ]

    def with_parameters(self, r=None, x=None) -> "FeederModel":
        """Copy with replaced line parameters; no positivity checks (estimates may be anything)."""
        r = self.r if r is None else np.asarray(r, dtype=float).copy()
        x = self.x if x is None else np.asarray(x, dtype=float).copy()
        if r.shape != self.r.shape or x.shape != self.x.shape:
            raise FeederError("parameter vectors must have length L")
        return FeederModel(self.labels, self.parent, r, x, self.z, self.v0)

    def to_dict(self) -> dict:
        lines = []
        for seg in self.lines():
            d = {"from": seg.from_bus, "to": seg.to_bus, "r": seg.r, "x": seg.x}
            if seg.z_ratio is not None:
                d["z"] = seg.z_ratio
            lines.append(d)
        return {"v0": self.v0, "root": self.labels[0], "lines": lines}


@dataclass(frozen=True)
class SensitivityMatrices:
    R: np.ndarray
    X: np.ndarray


def _label_key(label: str):
    try:
        return (0, int(label), label)
    except ValueError:
        return (1, 0, label)


def build_feeder(lines: Iterable[LineSegment], v0: float = 1.0, root="0") -> FeederModel:
    """Validate a line list and return the re-indexed feeder.

    Lines may be given in either direction; they are oriented away from
    ``root``.  A line carrying ``z_ratio`` but ``r=None`` gets ``r = z*x``.
    """
    segs = list(lines)
    root = str(root)
    if not segs:
        raise FeederError("a feeder needs at least one line")

    seen_pairs = set()
    adj: dict[str, list[tuple[str, int]]] = {}
    # union-find for cycle detection
    uf: dict[str, str] = {}

    def find(a):
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    for i, s in enumerate(segs):
        a, b = str(s.from_bus), str(s.to_bus)
        if a == b:
            raise CycleDetected(f"line {i} is a self-loop at bus {a}")
        pair = frozenset((a, b))
        if pair in seen_pairs:
            raise DuplicateLine(f"more than one line between buses {a} and {b}")
        seen_pairs.add(pair)
        if not s.x > 0:
            raise NonPositiveReactance(f"line {a}-{b} has reactance {s.x}")
        for u in (a, b):
            uf.setdefault(u, u)
        ra, rb = find(a), find(b)
        if ra == rb:
            raise CycleDetected(f"line {a}-{b} closes a cycle")
        uf[ra] = rb
        adj.setdefault(a, []).append((b, i))
        adj.setdefault(b, []).append((a, i))

    if root not in adj:
        raise Disconnected(f"reference bus {root!r} is not an endpoint of any line")
    comps = {find(u) for u in uf}
    if len(comps) > 1:
        raise Disconnected(f"feeder graph has {len(comps)} connected components")

    # breadth-first re-indexing, children visited in natural label order
    labels = [root]
    parent = [-1]
    line_of = [-1]
    index = {root: 0}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v, i in sorted(adj[u], key=lambda e: _label_key(e[0])):
            if v in index:
                continue
            index[v] = len(labels)
            labels.append(v)
            parent.append(index[u])
            line_of.append(i)
            queue.append(v)

    n = len(labels) - 1
    r = np.empty(n)
    x = np.empty(n)
    z = np.empty(n)
    have_z = [segs[line_of[k]].z_ratio is not None for k in range(1, n + 1)]
    if any(have_z) and not all(have_z):
        raise FeederError("r-to-x ratios must be given for all lines or none")
    for k in range(1, n + 1):
        s = segs[line_of[k]]
        xk = float(s.x)
        rk = s.r
        if s.z_ratio is not None:
            zk = float(s.z_ratio)
            if zk < 0:
                raise FeederError(f"negative r-to-x ratio on line {s.from_bus}-{s.to_bus}")
            if rk is None:
                rk = zk * xk
            elif abs(float(rk) - zk * xk) > _RATIO_TOL:
                raise FeederError(
                    f"line {s.from_bus}-{s.to_bus}: r={rk} inconsistent with z*x={zk * xk}")
            z[k - 1] = zk
        if rk is None:
            raise FeederError(f"line {s.from_bus}-{s.to_bus} has neither r nor z")
        if float(rk) < 0:
            raise FeederError(f"line {s.from_bus}-{s.to_bus} has negative resistance")
        r[k - 1] = float(rk)
        x[k - 1] = xk

    return FeederModel(tuple(labels), np.array(parent), r, x,
                       z if all(have_z) else None, float(v0))


def feeder_from_dict(data: dict) -> FeederModel:
    try:
        raw = data["lines"]
    except (KeyError, TypeError):
        raise FeederError("feeder description needs a 'lines' list") from None
    segs = []
    for i, d in enumerate(raw):
        try:
            segs.append(LineSegment(str(d["from"]), str(d["to"]),
                                    None if d.get("r") is None else float(d["r"]),
                                    float(d["x"]),
                                    None if d.get("z") is None else float(d["z"]),
                                    i + 1))
        except KeyError as e:
            raise FeederError(f"line entry {i} lacks field {e}") from None
    return build_feeder(segs, v0=float(data.get("v0", 1.0)), root=data.get("root", "0"))


def load_feeder(path) -> FeederModel:
    with open(path) as fh:
        return feeder_from_dict(json.load(fh))


def save_feeder(feeder: FeederModel, path) -> None:
    Path(path).write_text(json.dumps(feeder.to_dict(), indent=1) + "\n")


def load_bundled(name: str) -> FeederModel:
    """Load one of the feeders shipped with the package (see ``BUNDLED_FEEDERS``)."""
    if name not in BUNDLED_FEEDERS:
        raise KeyError(f"no bundled feeder {name!r}; choose from {BUNDLED_FEEDERS}")
    text = resources.files("feederid.data").joinpath(f"{name}.json").read_text()
    return feeder_from_dict(json.loads(text))


# graph matrices ---------------------------------------------------------------

def incidence(feeder: FeederModel) -> np.ndarray:
    """Reduced node-edge incidence matrix: +1 at the downstream bus, -1 upstream."""
    n = feeder.n_buses
    M = np.zeros((n, n))
    for k in range(1, n + 1):
        M[k - 1, k - 1] = 1.0
        p = feeder.parent[k]
        if p > 0:
            M[p - 1, k - 1] = -1.0
    return M


def path_matrix(feeder: FeederModel) -> np.ndarray:
    """0/1 matrix P with P[n-1, l] = 1 iff line l lies on the root path of bus n (P = M^{-T})."""
    n = feeder.n_buses
    P = np.zeros((n, n))
    for k in range(1, n + 1):
        p = feeder.parent[k]
        if p > 0:
            P[k - 1] = P[p - 1]
        P[k - 1, k - 1] = 1.0
    return P


def subtree_sum(feeder: FeederModel, y) -> np.ndarray:
    """Apply M^{-1} along the last axis: the value on line k-1 is the sum of ``y`` below bus k."""
    out = np.array(y, copy=True, dtype=np.result_type(np.asarray(y).dtype, float))
    if out.shape[-1] != feeder.n_buses:
        raise ValueError(f"last axis must have length {feeder.n_buses}")
    parent = feeder.parent
    for k in range(feeder.n_buses, 1, -1):
        p = parent[k]
        if p > 0:
            out[..., p - 1] += out[..., k - 1]
    return out


def path_sum(feeder: FeederModel, w) -> np.ndarray:
    """Apply M^{-T} along the last axis: the value at bus n is the sum of ``w`` over its root path."""
    out = np.array(w, copy=True, dtype=np.result_type(np.asarray(w).dtype, float))
    if out.shape[-1] != feeder.n_lines:
        raise ValueError(f"last axis must have length {feeder.n_lines}")
    parent = feeder.parent
    for k in range(2, feeder.n_buses + 1):
        p = parent[k]
        if p > 0:
            out[..., k - 1] += out[..., p - 1]
    return out


def _check_params(feeder, v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (feeder.n_lines,):
        raise ValueError(f"{name} must have length {feeder.n_lines}, got shape {v.shape}")
    return v


def sensitivity_matrices(feeder: FeederModel, r=None, x=None, check: bool = True) -> SensitivityMatrices:
    """R(r) and X(x) from the common root-path rule.

    With ``check`` the result is compared against the dense product
    ``M^{-T} diag(.) M^{-1}``; disagreement beyond 1e-10 relative raises
    :class:`SingularIncidence`.
    """
    r = feeder.r if r is None else _check_params(feeder, r, "r")
    x = feeder.x if x is None else _check_params(feeder, x, "x")
    P = path_matrix(feeder)
    R = (P * r) @ P.T
    X = (P * x) @ P.T
    if check:
        M = incidence(feeder)
        try:
            Minv = np.linalg.solve(M, np.eye(feeder.n_buses))
        except np.linalg.LinAlgError as e:
            raise SingularIncidence(str(e)) from e
        for name, path_based, p in (("R", R, r), ("X", X, x)):
            dense = Minv.T @ (p[:, None] * Minv)
            scale = max(np.abs(dense).max(), np.finfo(float).tiny)
            if np.abs(path_based - dense).max() > _AGREE_RTOL * scale:
                raise SingularIncidence(f"path-rule and dense {name} disagree")
    return SensitivityMatrices(R, X)


def condition_number(M) -> float:
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def random_feeder(n_buses: int, rng=None, *, x_range=(0.0005, 0.0025), z_range=(0.5, 2.0),
                  extend_prob: float = 0.0, v0: float = 1.0) -> FeederModel:
    """Random radial feeder with ``n_buses`` non-reference buses.

    Bus ``k`` attaches to bus ``k-1`` with probability ``extend_prob``
    (growing laterals) and otherwise to a uniformly chosen earlier bus.
    Lines carry r-to-x ratios drawn from ``z_range``.
    """
    rng = np.random.default_rng(rng)
    segs = []
    for k in range(1, n_buses + 1):
        if k > 1 and rng.random() < extend_prob:
            p = k - 1
        else:
            p = int(rng.integers(0, k))
        x = float(rng.uniform(*x_range))
        z = float(rng.uniform(*z_range))
        segs.append(LineSegment(str(p), str(k), None, x, z, k))
    return build_feeder(segs, v0=v0, root="0")
