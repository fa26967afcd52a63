"""Penalized HUM null control for the linear degenerate system.

Minimises

    J_eps(h) = 1/2 int_{omega_T} |h|^2 + 1/(2 eps) |u(T)|^2

through its dual: with the control Gramian Lambda (terminal datum phi ->
adjoint solve -> restrict to omega -> forward solve from rest -> u(T)),

    (Lambda + eps I) phi = u_free(T),   h = -phi_adjoint restricted to omega,

so that at the optimum u(T) = eps * phi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Optional

import numpy as np

from .evolution import ProblemSpec, initial_values, make_stepper, solve_adjoint, solve_forward
from .grid import Field, SpaceMesh, TimeGrid, omega_fractions
from .linalg import conjugate_gradient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HumConfig:
    eps: float = 1e-4
    cg_tol: float = 1e-8
    cg_maxit: int = 500

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError(f"penalty eps must be positive, got {self.eps}")
        if not 0 < self.cg_tol < 1:
            raise ValueError(f"cg_tol must lie in (0, 1), got {self.cg_tol}")
        if self.cg_maxit < 1:
            raise ValueError("cg_maxit must be at least 1")


@dataclass
class ControlResult:
    control: Field                 # h on the time intervals, zero outside omega
    trajectory: Field
    final_norm: float
    control_cost: float
    J_value: float
    eps: float
    cg_iterations: int = 0
    converged: bool = True
    optimality_residual: float = 0.0
    terminal_residual: float = 0.0
    free_final_norm: float = 0.0
    dual_objective: list = field(default_factory=list)

    @property
    def warning(self) -> bool:
        return not self.converged


def _adjoint_control(spec, phi_T, mesh, tgrid, chi, b0=None, b1=None, stepper=None) -> np.ndarray:
    """chi * v on the intervals, v the homogeneous adjoint with v(T) = phi_T."""
    v = solve_adjoint(spec, None, phi_T, mesh, tgrid, b0=b0, b1=b1, stepper=stepper)
    return chi[:, None] * v.values[:, :-1]


def control_cost(c: np.ndarray, chi: np.ndarray, mesh: SpaceMesh, tgrid: TimeGrid) -> float:
    """int_{omega_T} |c|^2 for a control density c on the intervals."""
    return tgrid.dt * float(np.sum((mesh.volumes * chi)[:, None] * c * c))


def gramian_apply(spec: ProblemSpec, phi_T: np.ndarray, mesh: SpaceMesh, tgrid: TimeGrid,
                  b0=None, b1=None, steppers=None) -> np.ndarray:
    fwd, adj = steppers or (None, None)
    chi = omega_fractions(mesh, spec.omega)
    src = Field(_adjoint_control(spec, phi_T, mesh, tgrid, chi, b0, b1, adj), mesh, tgrid)
    u = solve_forward(spec, src, mesh, tgrid, u0=np.zeros(mesh.n + 1), b0=b0, b1=b1, stepper=fwd)
    return u.values[:, -1]


def gramian_matrix(spec: ProblemSpec, mesh: SpaceMesh, tgrid: TimeGrid) -> np.ndarray:
    """Lambda on the free nodes 0..n-1, one column per unit terminal datum."""
    n = mesh.n
    G = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n + 1)
        e[j] = 1.0
        G[:, j] = gramian_apply(spec, e, mesh, tgrid)[:n]
    return G


def solve_hum(spec: ProblemSpec, u0, cfg: HumConfig, mesh: SpaceMesh, tgrid: TimeGrid,
              b0=None, b1=None) -> ControlResult:
    u0 = initial_values(spec, mesh, u0)
    chi = omega_fractions(mesh, spec.omega)
    steppers = (make_stepper(spec, mesh, tgrid, False, b0, b1),
                make_stepper(spec, mesh, tgrid, True, b0, b1))
    fwd, adj = steppers
    free = solve_forward(spec, None, mesh, tgrid, u0=u0, stepper=fwd)
    rhs = free.values[:, -1].copy()
    free_norm = mesh.norm(rhs)

    def matvec(phi):
        return gramian_apply(spec, phi, mesh, tgrid, b0, b1, steppers) + cfg.eps * phi

    cg = conjugate_gradient(matvec, rhs, inner=mesh.inner, tol=cfg.cg_tol, maxiter=cfg.cg_maxit)
    if not cg.converged:
        log.warning("HUM CG stopped after %d iterations without reaching tol %.1e",
                    cg.iterations, cfg.cg_tol)
    phi = cg.x
    c = -_adjoint_control(spec, phi, mesh, tgrid, np.ones(mesh.n + 1), b0, b1, adj)
    h = Field(chi[:, None] * c, mesh, tgrid)
    u = solve_forward(spec, h, mesh, tgrid, u0=u0, stepper=fwd)
    uT = u.values[:, -1]
    final_norm = mesh.norm(uT)
    cost = control_cost(c, chi, mesh, tgrid)
    J = 0.5 * cost + final_norm ** 2 / (2 * cfg.eps)

    # optimality system: h = -(adjoint of u(T)/eps) on omega
    c_check = _adjoint_control(spec, uT / cfg.eps, mesh, tgrid, np.ones(mesh.n + 1), b0, b1, adj)
    resid = math.sqrt(control_cost(c + c_check, chi, mesh, tgrid))
    hnorm = math.sqrt(cost)
    opt_res = resid / hnorm if hnorm > 0 else resid
    # fixed-point form |u(T) - eps phi| / |u_free(T)|: the relative CG residual
    term_res = mesh.norm(uT - cfg.eps * phi) / free_norm if free_norm > 0 else 0.0

    if J > free_norm ** 2 / (2 * cfg.eps) * (1 + 1e-12) + 1e-300:
        log.warning("HUM control did not improve on h = 0 (J = %.3e)", J)
    return ControlResult(
        control=h, trajectory=u, final_norm=final_norm, control_cost=cost, J_value=J,
        eps=cfg.eps, cg_iterations=cg.iterations, converged=cg.converged,
        optimality_residual=opt_res, terminal_residual=term_res, free_final_norm=free_norm, dual_objective=cg.objective,
    )


def control_cost_vs_window(spec: ProblemSpec, u0, cfg: HumConfig, windows, sizes=(64,),
                           m: Optional[int] = None, gamma: float = 2.0) -> list:
    """One row per (window, n): cost and final norm of the HUM control."""
    from .grid import make_graded_mesh, make_time_grid

    rows = []
    for omega in windows:
        wspec = spec.replace(omega=tuple(omega), geometric=False)
        for n in sizes:
            mesh = make_graded_mesh(n, gamma)
            tgrid = make_time_grid(spec.T, m or n)
            res = solve_hum(wspec, u0, cfg, mesh, tgrid)
            rows.append({
                "a": wspec.omega[0], "b": wspec.omega[1], "n": n, "m": tgrid.m,
                "eps": cfg.eps, "cost": res.control_cost, "final_norm": res.final_norm,
                "cg_iterations": res.cg_iterations, "converged": res.converged,
            })
    return rows
