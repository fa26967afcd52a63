"""Degenerate parabolic operator, forward and adjoint time marching.

The spatial operator is

    A u = -(x^alpha u_x)_x + x^{alpha/2} b1 u_x + b0 u

discretised in flux form on the dual cells of a SpaceMesh.  The node x = 1
carries the Dirichlet condition u = 0; at x = 0 the flux x^alpha u_x vanishes
identically, so no boundary value is imposed there.

Time stepping is implicit Euler.  The adjoint marches backwards with the
transpose of the forward step matrix in the cell-volume inner product, which
makes the discrete duality identity

    <u(T), v_T> - <u_0, v(0)> = dt sum_k <f^{k+1}, v^k> - dt sum_k <h^k, u^{k+1}>

hold to round-off.  Sources for the forward problem on interval k act at the
new level k+1; adjoint sources on interval k act at level k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import SolverError
from .grid import Field, SpaceMesh, TimeGrid, _check_interval
from .linalg import ThomasFactor, tridiag_dense, tridiag_matvec

Coefficient = Union[float, Callable, Field, np.ndarray]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    alpha: float = 2.0
    T: float = 1.0
    omega: tuple = (0.0, 0.3)
    b0: Coefficient = 0.0
    b1: Coefficient = 0.0
    u0: Union[None, Callable, np.ndarray] = None
    geometric: bool = True

    def __post_init__(self) -> None:
        if not self.alpha >= 2:
            raise ValueError(f"alpha >= 2 required (super-strong degeneracy), got {self.alpha}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        a, b = _check_interval(self.omega)
        if self.geometric and a != 0.0:
            raise ValueError(
                f"control window ({a}, {b}) must contain an interval (0, d) "
                "under the geometric hypothesis"
            )
        object.__setattr__(self, "omega", (a, b))

    def replace(self, **changes) -> "ProblemSpec":
        kw = dict(alpha=self.alpha, T=self.T, omega=self.omega, b0=self.b0, b1=self.b1,
                  u0=self.u0, geometric=self.geometric)
        kw.update(changes)
        return ProblemSpec(**kw)

    @property
    def has_constant_coefficients(self) -> bool:
        return np.isscalar(self.b0) and np.isscalar(self.b1)


def initial_values(spec: ProblemSpec, mesh: SpaceMesh, u0=None) -> np.ndarray:
    u0 = spec.u0 if u0 is None else u0
    if u0 is None:
        return np.zeros(mesh.n + 1)
    if callable(u0):
        return np.broadcast_to(np.asarray(u0(mesh.nodes), dtype=float), (mesh.n + 1,)).copy()
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (mesh.n + 1,):
        raise ValueError(f"initial datum has shape {u0.shape}, expected ({mesh.n + 1},)")
    return u0.copy()


def coefficient_values(coef: Coefficient, mesh: SpaceMesh, t: float,
                       level: Optional[int] = None) -> np.ndarray:
    """Nodal values of a coefficient at time t (or time level ``level``)."""
    if isinstance(coef, Field):
        if level is None:
            raise ValueError("field coefficients need a time level")
        return coef.values[:, level] if coef.on_levels else coef.values[:, max(level - 1, 0)]
    if callable(coef):
        return np.broadcast_to(np.asarray(coef(mesh.nodes, t), dtype=float), (mesh.n + 1,))
    arr = np.asarray(coef, dtype=float)
    if arr.ndim == 2:
        if level is None:
            raise ValueError("array coefficients need a time level")
        return arr[:, level]
    return np.broadcast_to(arr, (mesh.n + 1,))


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Tridiagonal matrix of A on all n+1 nodes; the last row (x = 1) is zero.

    Row n is the Dirichlet row: in a time step it is replaced by u_n = 0.
    Operators act on vectors that satisfy u_n = 0.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    mesh: SpaceMesh

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = tridiag_matvec(self.lower, self.diag, self.upper, u)
        out[-1] = 0.0
        return out

    def dense(self) -> np.ndarray:
        return tridiag_dense(self.lower, self.diag, self.upper)

    @property
    def left_face_flux_coefficient(self) -> float:
        # flux through x = 0 is x^alpha u_x with x^alpha = 0 there
        return 0.0

    def transpose(self) -> "DiscreteOperator":
        """Adjoint in the cell-volume inner product on {u : u_n = 0}."""
        vol = self.mesh.volumes
        n = self.mesh.n
        lo = np.zeros(n + 1)
        up = np.zeros(n + 1)
        # (A^T)_{i,i-1} = A_{i-1,i} vol_{i-1} / vol_i
        lo[1:n] = self.upper[0:n - 1] * vol[0:n - 1] / vol[1:n]
        # (A^T)_{i,i+1} = A_{i+1,i} vol_{i+1} / vol_i, only within the free block
        up[0:n - 1] = self.lower[1:n] * vol[1:n] / vol[0:n - 1]
        dg = self.diag.copy()
        dg[n] = 0.0
        return DiscreteOperator(lo, dg, up, self.mesh)

    def step_factor(self, dt: float) -> ThomasFactor:
        """Factor of (I + dt A) on the free nodes 0..n-1."""
        n = self.mesh.n
        return ThomasFactor(dt * self.lower[:n], 1.0 + dt * self.diag[:n], dt * self.upper[:n])


def diffusion_coefficients(mesh: SpaceMesh, alpha: float) -> np.ndarray:
    """x_{i+1/2}^alpha / (x_{i+1} - x_i) for the n interior faces."""
    return mesh.midpoints ** alpha / mesh.spacing


def assemble(spec: ProblemSpec, mesh: SpaceMesh, t: float, level: Optional[int] = None,
             b0=None, b1=None) -> DiscreteOperator:
    n = mesh.n
    vol = mesh.volumes
    x = mesh.nodes
    a = diffusion_coefficients(mesh, spec.alpha)
    lower = np.zeros(n + 1)
    diag = np.zeros(n + 1)
    upper = np.zeros(n + 1)
    # face i+1/2 couples nodes i and i+1; face -1/2 (x = 0) carries no flux
    diag[:n] += a / vol[:n]
    upper[:n] -= a / vol[:n]
    diag[1:n] += a[:n - 1] / vol[1:n]
    lower[1:n] -= a[:n - 1] / vol[1:n]

    b0v = coefficient_values(spec.b0 if b0 is None else b0, mesh, t, level)
    b1v = coefficient_values(spec.b1 if b1 is None else b1, mesh, t, level)
    if np.any(b1v[1:n] != 0):
        c = x[1:n] ** (spec.alpha / 2) * b1v[1:n] / (x[2:] - x[:-2])
        upper[1:n] += c
        lower[1:n] -= c
    diag[:n] += b0v[:n]
    return DiscreteOperator(lower, diag, upper, mesh)


class _Stepper:
    """Caches per-level step factors; one factor when coefficients are constant."""

    def __init__(self, spec: ProblemSpec, mesh: SpaceMesh, tgrid: TimeGrid, adjoint: bool,
                 b0=None, b1=None):
        self.spec, self.mesh, self.tgrid, self.adjoint = spec, mesh, tgrid, adjoint
        self.b0 = spec.b0 if b0 is None else b0
        self.b1 = spec.b1 if b1 is None else b1
        self.constant = np.isscalar(self.b0) and np.isscalar(self.b1)
        self._cache = {}

    def factor(self, level: int) -> ThomasFactor:
        key = 0 if self.constant else level
        if key not in self._cache:
            op = assemble(self.spec, self.mesh, self.tgrid.times[level], level, self.b0, self.b1)
            if self.adjoint:
                op = op.transpose()
            try:
                self._cache[key] = op.step_factor(self.tgrid.dt)
            except SolverError as exc:
                exc.diagnostics.update(level=level, adjoint=self.adjoint)
                raise
        return self._cache[key]


def _source_column(f: Optional[Field], k: int, forward: bool) -> Optional[np.ndarray]:
    if f is None:
        return None
    if f.on_levels:
        return f.values[:, k + 1] if forward else f.values[:, k]
    return f.values[:, k]


def make_stepper(spec: ProblemSpec, mesh: SpaceMesh, tgrid: TimeGrid, adjoint: bool,
                 b0=None, b1=None) -> _Stepper:
    """A reusable factor cache for repeated solves with the same coefficients."""
    return _Stepper(spec, mesh, tgrid, adjoint, b0, b1)


def solve_forward(spec: ProblemSpec, f: Optional[Field], mesh: SpaceMesh, tgrid: TimeGrid,
                  u0=None, b0=None, b1=None, stepper: Optional[_Stepper] = None) -> Field:
    """Implicit Euler: (I + dt A^{k+1}) u^{k+1} = u^k + dt f^{k+1}."""
    n, m, dt = mesh.n, tgrid.m, tgrid.dt
    U = np.zeros((n + 1, m + 1))
    U[:, 0] = initial_values(spec, mesh, u0)
    if stepper is None:
        stepper = _Stepper(spec, mesh, tgrid, adjoint=False, b0=b0, b1=b1)
    for k in range(m):
        rhs = U[:n, k].copy()
        src = _source_column(f, k, forward=True)
        if src is not None:
            rhs += dt * src[:n]
        U[:n, k + 1] = stepper.factor(k + 1).solve(rhs)
    return Field(U, mesh, tgrid)


def solve_adjoint(spec: ProblemSpec, h: Optional[Field], v_T, mesh: SpaceMesh,
                  tgrid: TimeGrid, b0=None, b1=None, stepper: Optional[_Stepper] = None) -> Field:
    """Backward implicit Euler with the transposed step: (I + dt A~^{k+1}) v^k = v^{k+1} + dt h^k."""
    n, m, dt = mesh.n, tgrid.m, tgrid.dt
    V = np.zeros((n + 1, m + 1))
    vT = np.zeros(n + 1) if v_T is None else np.asarray(v_T, dtype=float).copy()
    if vT.shape != (n + 1,):
        raise ValueError(f"terminal datum has shape {vT.shape}, expected ({n + 1},)")
    vT[n] = 0.0
    V[:, m] = vT
    if stepper is None:
        stepper = _Stepper(spec, mesh, tgrid, adjoint=True, b0=b0, b1=b1)
    for k in range(m - 1, -1, -1):
        rhs = V[:n, k + 1].copy()
        src = _source_column(h, k, forward=False)
        if src is not None:
            rhs += dt * src[:n]
        V[:n, k] = stepper.factor(k + 1).solve(rhs)
    return Field(V, mesh, tgrid)


def pair_source_adjoint(f: Optional[Field], v: Field) -> float:
    """dt sum_k <f^{k+1}, v^k>: the discrete form of the integral of f v."""
    if f is None:
        return 0.0
    mesh, tgrid = v.mesh, v.tgrid
    total = 0.0
    for k in range(tgrid.m):
        total += mesh.inner(_source_column(f, k, forward=True), v.values[:, k])
    return tgrid.dt * total


def pair_state_source(u: Field, h: Optional[Field]) -> float:
    """dt sum_k <h^k, u^{k+1}>: the discrete form of the integral of h u."""
    if h is None:
        return 0.0
    mesh, tgrid = u.mesh, u.tgrid
    total = 0.0
    for k in range(tgrid.m):
        total += mesh.inner(_source_column(h, k, forward=False), u.values[:, k + 1])
    return tgrid.dt * total


def duality_defect(u: Field, f: Optional[Field], v: Field, h: Optional[Field]) -> float:
    mesh = u.mesh
    lhs = mesh.inner(u.values[:, -1], v.values[:, -1]) - mesh.inner(u.values[:, 0], v.values[:, 0])
    rhs = pair_source_adjoint(f, v) - pair_state_source(u, h)
    return lhs - rhs


# ---------------------------------------------------------------- norms

def flux_gradient(u: np.ndarray, mesh: SpaceMesh) -> np.ndarray:
    """u_x on the interior faces, along the first axis."""
    return np.diff(u, axis=0) / mesh.spacing.reshape((-1,) + (1,) * (u.ndim - 1))


def flux_divergence(u: np.ndarray, mesh: SpaceMesh, alpha: float) -> np.ndarray:
    """(x^alpha u_x)_x at every node, along the first axis.

    Interior nodes use the same dual-cell stencil as ``assemble``; the node
    x = 1 uses the one-sided flux at the boundary face.
    """
    shape = (-1,) + (1,) * (u.ndim - 1)
    g = flux_gradient(u, mesh)
    flux = (mesh.midpoints ** alpha).reshape(shape) * g
    zero = np.zeros((1,) + u.shape[1:])
    right = g[-1:] * 1.0  # 1^alpha times the last face gradient
    faces = np.concatenate((zero, flux, right), axis=0)
    return np.diff(faces, axis=0) / mesh.volumes.reshape(shape)


def weighted_gradient_sq(u: np.ndarray, mesh: SpaceMesh, alpha: float) -> np.ndarray:
    """x^alpha |u_x|^2 on the interior faces."""
    shape = (-1,) + (1,) * (u.ndim - 1)
    return (mesh.midpoints ** alpha).reshape(shape) * flux_gradient(u, mesh) ** 2


def hs_norm(u, which: str, alpha: float, mesh: Optional[SpaceMesh] = None) -> float:
    """Discrete L2, H^1_alpha or H^2_alpha norm.

    A Field gives the space-time norm (time midpoint rule, levels averaged);
    a nodal vector together with ``mesh`` gives the spatial norm.
    """
    if which not in ("L2", "H1alpha", "H2alpha"):
        raise ValueError(f"unknown norm {which!r}")
    if isinstance(u, Field):
        mesh = u.mesh
        vals = u.interval_values("mid")
        dts = np.full(vals.shape[1], u.tgrid.dt)
    else:
        if mesh is None:
            raise ValueError("a mesh is required for nodal vectors")
        vals = np.asarray(u, dtype=float).reshape(-1, 1)
        dts = np.ones(1)
    total = np.sum(mesh.volumes[:, None] * vals ** 2 * dts)
    if which in ("H1alpha", "H2alpha"):
        total += np.sum(mesh.spacing[:, None] * weighted_gradient_sq(vals, mesh, alpha) * dts)
    if which == "H2alpha":
        total += np.sum(mesh.volumes[:, None] * flux_divergence(vals, mesh, alpha) ** 2 * dts)
    return float(np.sqrt(total))


def energy_ratio(u: Field, f: Optional[Field], u0: np.ndarray, alpha: float) -> float:
    """(sup_t |u|^2 + ||x^{alpha/2} u_x||^2) / (||f||^2 + |u0|^2)."""
    mesh, tgrid = u.mesh, u.tgrid
    sup = max(mesh.inner(u.values[:, k], u.values[:, k]) for k in range(tgrid.m + 1))
    grad = hs_norm(u, "H1alpha", alpha) ** 2 - hs_norm(u, "L2", alpha) ** 2
    data = mesh.inner(u0, u0)
    if f is not None:
        fv = f.values[:, 1:] if f.on_levels else f.values
        data += tgrid.dt * float(np.sum(mesh.volumes[:, None] * fv ** 2))
    return (sup + grad) / data
