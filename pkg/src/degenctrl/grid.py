"""Space-time discretization of Q = (0,1) x (0,T).

Nodes are graded towards the degenerate end x = 0.  Every node owns a dual
cell bounded by the midpoints to its neighbours (clipped to [0, 1]), so the
cell volumes are the composite trapezoid weights.  Time quadrature works on
the intervals (t_k, t_{k+1}); weights are evaluated at interval midpoints and
never at t = 0 or t = T.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np

from .errors import NumericalDomainError

WeightLike = Union[None, float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


@dataclass(frozen=True, eq=False)
class SpaceMesh:
    nodes: np.ndarray
    grading: float = 1.0

    def __post_init__(self) -> None:
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise ValueError("mesh must start at 0 and end at 1")
        if np.any(np.diff(x) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def n(self) -> int:
        """Number of cells; there are n + 1 nodes."""
        return self.nodes.size - 1

    @cached_property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    @cached_property
    def faces(self) -> np.ndarray:
        """0, the n midpoints, 1 (length n + 2)."""
        x = self.nodes
        return np.concatenate(([0.0], 0.5 * (x[:-1] + x[1:]), [1.0]))

    @cached_property
    def midpoints(self) -> np.ndarray:
        """Interior faces only, i.e. x_{i+1/2} for i = 0..n-1."""
        return self.faces[1:-1]

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.diff(self.faces)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Discrete L^2(0,1) inner product (trapezoid rule)."""
        return float(np.dot(self.volumes * a, b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))


def make_graded_mesh(n: int, gamma: float = 2.0) -> SpaceMesh:
    """Nodes x_i = (i/n)**gamma, i = 0..n."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if not gamma >= 1.0:
        raise ValueError(f"grading exponent must be >= 1, got {gamma!r}")
    n = int(n)
    nodes = (np.arange(n + 1) / n) ** gamma
    nodes[0], nodes[-1] = 0.0, 1.0
    return SpaceMesh(nodes, float(gamma))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    T: float
    m: int

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def dt(self) -> float:
        return self.T / self.m

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.m + 1) * self.dt
        t[-1] = self.T
        return t

    @cached_property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) * self.dt


def make_time_grid(T: float, m: int) -> TimeGrid:
    return TimeGrid(float(T), m)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal space-time values.

    ``values`` has shape (n+1, m+1) for a trajectory sampled at the time
    levels, or (n+1, m) for a quantity living on the time intervals (sources,
    controls, time differences).
    """

    values: np.ndarray
    mesh: SpaceMesh
    tgrid: TimeGrid

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        rows = self.mesh.n + 1
        if v.ndim != 2 or v.shape[0] != rows or v.shape[1] not in (self.tgrid.m, self.tgrid.m + 1):
            raise ValueError(
                f"field shape {v.shape} does not match grids "
                f"({rows}, {self.tgrid.m}) or ({rows}, {self.tgrid.m + 1})"
            )
        object.__setattr__(self, "values", v)

    @property
    def on_levels(self) -> bool:
        return self.values.shape[1] == self.tgrid.m + 1

    def interval_values(self, side: str = "mid") -> np.ndarray:
        """Values on the m time intervals.

        For level fields ``side`` picks the left end, the right end or the
        average of both; interval fields are returned unchanged.
        """
        if not self.on_levels:
            return self.values
        v = self.values
        if side == "mid":
            return 0.5 * (v[:, :-1] + v[:, 1:])
        if side == "right":
            return v[:, 1:]
        if side == "left":
            return v[:, :-1]
        raise ValueError(f"unknown side {side!r}")

    def at_level(self, k: int) -> np.ndarray:
        if not self.on_levels:
            raise ValueError("interval fields have no time levels")
        return self.values[:, k]

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(values, self.mesh, self.tgrid)

    def __add__(self, other: "Field") -> "Field":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, mesh: SpaceMesh, tgrid: TimeGrid, levels: bool = True) -> "Field":
        cols = tgrid.m + 1 if levels else tgrid.m
        return cls(np.zeros((mesh.n + 1, cols)), mesh, tgrid)

    @classmethod
    def from_function(cls, fn, mesh: SpaceMesh, tgrid: TimeGrid, levels: bool = True) -> "Field":
        """Sample fn(x, t) at nodes and either time levels or interval midpoints."""
        t = tgrid.times if levels else tgrid.midpoints
        X, Tm = np.meshgrid(mesh.nodes, t, indexing="ij")
        return cls(np.broadcast_to(fn(X, Tm), X.shape).astype(float), mesh, tgrid)


def quadrature_weights(mesh: SpaceMesh, tgrid: TimeGrid) -> np.ndarray:
    """Trapezoid-in-space times midpoint-in-time weights, shape (n+1, m)."""
    return np.outer(mesh.volumes, np.full(tgrid.m, tgrid.dt))


def evaluate_weight(weight: WeightLike, mesh: SpaceMesh, tgrid: TimeGrid) -> np.ndarray:
    """Sample a space-time weight at (node, interval midpoint)."""
    shape = (mesh.n + 1, tgrid.m)
    if weight is None:
        return np.ones(shape)
    if callable(weight):
        X, Tm = np.meshgrid(mesh.nodes, tgrid.midpoints, indexing="ij")
        w = np.broadcast_to(np.asarray(weight(X, Tm), dtype=float), shape)
    else:
        w = np.broadcast_to(np.asarray(weight, dtype=float), shape)
    if not np.all(np.isfinite(w)):
        raise NumericalDomainError("weight is not finite at an interior quadrature point")
    return w


def integrate_qt(field: Field, weight: WeightLike = None, side: str = "mid") -> float:
    """Quadrature of weight * field**2 over Q."""
    w = evaluate_weight(weight, field.mesh, field.tgrid)
    v = field.interval_values(side)
    return float(np.sum(quadrature_weights(field.mesh, field.tgrid) * w * v * v))


def log_integrate_qt(values: np.ndarray, log_weight: np.ndarray, mesh: SpaceMesh,
                     tgrid: TimeGrid) -> float:
    """log of sum(dx dt * exp(log_weight) * values**2), safe for huge exponents.

    Returns -inf when the integrand vanishes identically.
    """
    q = quadrature_weights(mesh, tgrid)
    return log_sum(np.log(q) + log_weight, values)


def log_sum(log_scale: np.ndarray, values: np.ndarray) -> float:
    """log(sum(exp(log_scale) * values**2)) without forming exp(log_scale)."""
    v2 = np.asarray(values, dtype=float) ** 2
    mask = (v2 > 0) & np.isfinite(log_scale)
    if not np.any(mask):
        return -np.inf
    e = np.asarray(log_scale)[mask] + np.log(v2[mask])
    top = e.max()
    return float(top + np.log(np.sum(np.exp(e - top))))


def omega_fractions(mesh: SpaceMesh, omega: tuple[float, float]) -> np.ndarray:
    """Fraction of each node's dual cell lying inside omega."""
    a, b = _check_interval(omega)
    lo = np.maximum(mesh.faces[:-1], a)
    hi = np.minimum(mesh.faces[1:], b)
    return np.clip(hi - lo, 0.0, None) / mesh.volumes


def restrict_to_omega(field: Field, omega: tuple[float, float]) -> Field:
    chi = omega_fractions(field.mesh, omega)
    return field.with_values(field.values * chi[:, None])


def _check_interval(omega) -> tuple[float, float]:
    try:
        a, b = (float(c) for c in omega)
    except (TypeError, ValueError):
        raise ValueError(f"invalid interval {omega!r}") from None
    if not (0.0 <= a < b <= 1.0):
        raise ValueError(f"invalid interval ({a}, {b}): need 0 <= a < b <= 1")
    return a, b


def l2_qt(field: Field, side: str = "mid") -> float:
    """Discrete L^2(Q) norm."""
    return float(np.sqrt(integrate_qt(field, None, side)))
