"""Null control of the semilinear and the nonlocal degenerate problems.

Both are reduced to repeated linear control problems and iterated to a
fixed point.

Semilinear, u_t - (x^alpha u_x)_x + g(x, t, u, u_x) = h 1_omega:
    g(w, w_x) = b0[w] w + x^{alpha/2} b1[w] w_x with
    b0[w] = int_0^1 g_r(mu w, mu w_x) dmu and b1[w] = x^{-alpha/2} int_0^1 g_q(...) dmu.
    The system runs uncontrolled up to t1 = T0/2, then the HUM control of the
    linear system with coefficients b0[w], b1[w] defines the next trajectory w.

Nonlocal, u_t - l(int_0^1 u) (x^alpha u_x)_x = f 1_omega:
    the nonlocal part is moved to the source
    g = (l(int u) - 1) (x^alpha u_x)_x and the weighted control is recomputed
    until the state stops changing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
from typing import Callable, Optional

import numpy as np

from .errors import InvariantViolation, LocalRadiusExceeded, QuadratureFailure, SolverError
from .evolution import ProblemSpec, assemble, flux_divergence, initial_values
from .grid import Field, SpaceMesh, TimeGrid, make_time_grid
from .hum import ControlResult, HumConfig, solve_hum
from .weighted import WeightedConfig, WeightedControlResult, solve_weighted_control
from .weights import CarlemanParams

log = logging.getLogger(__name__)

GAUSS_ORDER = 8
_MU, _MU_W = np.polynomial.legendre.leggauss(GAUSS_ORDER)
_MU = 0.5 * (_MU + 1.0)
_MU_W = 0.5 * _MU_W


@dataclass(frozen=True, eq=False)
class SemilinearSpec:
    """g(x, t, r, q) with its partials; K bounds |g_r| + x^{-alpha/2} |g_q|."""

    g: Callable
    g_r: Callable
    g_q: Callable
    K: float
    name: str = "custom"

    def __post_init__(self) -> None:
        if not self.K >= 0:
            raise ValueError("Lipschitz budget K must be nonnegative")
        self.check(T=1.0)

    def check(self, T: float = 1.0, samples: int = 64, seed: int = 0) -> None:
        """g(., ., 0, 0) = 0 on a grid and the partials against central differences."""
        xs = np.linspace(0.0, 1.0, 17)
        ts = np.linspace(0.0, T, 9)
        X, Tt = np.meshgrid(xs, ts)
        zero = np.zeros_like(X)
        g0 = np.asarray(self.g(X, Tt, zero, zero), dtype=float)
        if np.max(np.abs(g0)) > 1e-14:
            raise ValueError("g(x, t, 0, 0) must vanish")
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.0, 1.0, samples)
        t = rng.uniform(0.0, T, samples)
        r = rng.uniform(-2.0, 2.0, samples)
        q = rng.uniform(-2.0, 2.0, samples)
        for name, partial, dr, dq in (("g_r", self.g_r, 1, 0), ("g_q", self.g_q, 0, 1)):
            h = 1e-5
            fd = (self.g(x, t, r + dr * h, q + dq * h) - self.g(x, t, r - dr * h, q - dq * h)) / (2 * h)
            exact = np.broadcast_to(np.asarray(partial(x, t, r, q), dtype=float), x.shape)
            if np.any(np.abs(fd - exact) > 1e-6 * np.maximum(1.0, np.abs(exact))):
                raise ValueError(f"supplied partial {name} disagrees with finite differences of g")


@dataclass(frozen=True, eq=False)
class NonlocalSpec:
    ell: Callable
    ell_prime: Optional[Callable] = None
    lipschitz: float = 1.0
    name: str = "custom"

    def __post_init__(self) -> None:
        if abs(float(self.ell(0.0)) - 1.0) > 1e-12:
            raise ValueError("the nonlocal coefficient must satisfy l(0) = 1")


@dataclass
class IterationTrace:
    coef_norms: list = field(default_factory=list)
    control_costs: list = field(default_factory=list)
    final_norms: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    defects: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def rows(self) -> list:
        out = []
        for i, d in enumerate(self.distances):
            pick = lambda seq: seq[i] if i < len(seq) else math.nan  # noqa: E731
            out.append({"iteration": i + 1, "coef_norm": pick(self.coef_norms),
                        "control_cost": pick(self.control_costs), "final_norm": pick(self.final_norms),
                        "distance": d, "defect": pick(self.defects), "damping": pick(self.damping)})
        return out

    def contraction_ratios(self) -> list:
        d = self.distances
        return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] > 0]


# ------------------------------------------------------------- semilinear

def nodal_gradient(w: np.ndarray, mesh: SpaceMesh) -> np.ndarray:
    return np.gradient(w, mesh.nodes, axis=0, edge_order=2)


def _linearize_slice(sspec: SemilinearSpec, x, t, w, wx, alpha):
    """b0, b1 and the reconstruction defect for one time level."""
    r = _MU[:, None] * w[None, :]
    q = _MU[:, None] * wx[None, :]
    b0 = _MU_W @ np.broadcast_to(sspec.g_r(x[None, :], t, r, q), r.shape)
    gq = _MU_W @ np.broadcast_to(sspec.g_q(x[None, :], t, r, q), r.shape)
    xa = x ** (alpha / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = np.where(x > 0, gq / xa, 0.0)
    recon = b0 * w + xa * b1 * wx
    defect = float(np.max(np.abs(np.asarray(sspec.g(x, t, w, wx), dtype=float) - recon)))
    return b0, b1, defect


def _check_linearization(sspec: SemilinearSpec, b0, b1, defect, wnorm) -> float:
    if defect > 1e-6 * (1 + wnorm):
        raise QuadratureFailure(f"reconstruction defect {defect:.3e} exceeds tolerance")
    bound = float(np.max(np.abs(b0)) + np.max(np.abs(b1)))
    if bound > 2 * sspec.K * (1 + 1e-12) + 1e-300:
        raise InvariantViolation(f"|b0| + |b1| = {bound:.6g} exceeds 2K = {2 * sspec.K:.6g}")
    return bound


def linearize_g(sspec: SemilinearSpec, w: Field, alpha: float, t_offset: float = 0.0):
    """(b0[w], b1[w]) on the time levels of w; also returns (bound, defect)."""
    if not w.on_levels:
        raise ValueError("linearize_g expects a trajectory on time levels")
    mesh, tgrid = w.mesh, w.tgrid
    x = mesh.nodes
    W = w.values
    WX = nodal_gradient(W, mesh)
    B0 = np.zeros_like(W)
    B1 = np.zeros_like(W)
    worst = 0.0
    for k, t in enumerate(tgrid.times):
        B0[:, k], B1[:, k], d = _linearize_slice(sspec, x, t + t_offset, W[:, k], WX[:, k], alpha)
        worst = max(worst, d)
    bound = _check_linearization(sspec, B0, B1, worst, float(np.max(np.abs(W))))
    return Field(B0, mesh, tgrid), Field(B1, mesh, tgrid), bound, worst


def _uncontrolled_phase(sspec: SemilinearSpec, spec: ProblemSpec, u0: np.ndarray, mesh: SpaceMesh,
                        tgrid: TimeGrid, steps: int, tol: float = 1e-12, inner_max: int = 50) -> np.ndarray:
    """Implicit Euler with the nonlinearity linearized at the inner Picard iterate."""
    n, dt = mesh.n, tgrid.dt
    x = mesh.nodes
    U = np.zeros((n + 1, steps + 1))
    U[:, 0] = u0
    for k in range(steps):
        t = tgrid.times[k + 1]
        w = U[:, k].copy()
        for _ in range(inner_max):
            b0, b1, d = _linearize_slice(sspec, x, t, w, nodal_gradient(w, mesh), spec.alpha)
            _check_linearization(sspec, b0, b1, d, float(np.max(np.abs(w))))
            op = assemble(spec, mesh, t, b0=b0, b1=b1)
            new = np.zeros(n + 1)
            new[:n] = op.step_factor(dt).solve(U[:n, k])
            change = float(np.max(np.abs(new - w)))
            w = new
            if change <= tol * (1 + float(np.max(np.abs(w)))):
                break
        U[:, k + 1] = w
    return U


def _l2q(diff: np.ndarray, mesh: SpaceMesh, dt: float) -> float:
    """L2(Q) norm of a level array, levels 1..m paired with the intervals."""
    return math.sqrt(dt * float(np.sum(mesh.volumes[:, None] * diff[:, 1:] ** 2)))


def _is_zero(f: Field) -> bool:
    return not np.any(f.values)


def solve_semilinear_control(sspec: SemilinearSpec, spec: ProblemSpec, u0, cfg: HumConfig,
                             mesh: SpaceMesh, tgrid: TimeGrid, T0: Optional[float] = None,
                             tol: float = 1e-6, maxit: int = 30):
    """Two-phase Picard iteration on HUM controls; returns (ControlResult, IterationTrace)."""
    T = tgrid.T
    T0 = T / 2 if T0 is None else T0
    if not 0 < T0 < T:
        raise ValueError("T0 must lie in (0, T)")
    k1 = int(round(T0 / 2 / tgrid.dt))
    if not 1 <= k1 < tgrid.m:
        raise ValueError("the time grid is too coarse to split at T0/2")
    t1 = k1 * tgrid.dt
    lin = spec.replace(b0=0.0, b1=0.0)
    u0 = initial_values(spec, mesh, u0)

    U1 = _uncontrolled_phase(sspec, lin, u0, mesh, tgrid, k1)
    u_split = U1[:, -1].copy()
    grid2 = make_time_grid(T - t1, tgrid.m - k1)
    spec2 = lin.replace(T=T - t1)

    trace = IterationTrace()
    w = Field(np.zeros((mesh.n + 1, grid2.m + 1)), mesh, grid2)
    prev_coefs = None
    theta = 1.0
    res: Optional[ControlResult] = None
    for it in range(1, maxit + 1):
        b0, b1, bound, defect = linearize_g(sspec, w, spec.alpha, t_offset=t1)
        coefs = (b0.values, b1.values)
        if prev_coefs is not None and all(np.array_equal(a, b) for a, b in zip(coefs, prev_coefs)):
            # same coefficients, same HUM solve: the next iterate equals this one
            trace.distances.append(0.0)
            trace.converged = True
            break
        zero = _is_zero(b0) and _is_zero(b1)
        res = solve_hum(spec2, u_split, cfg, mesh, grid2,
                        b0=0.0 if zero else b0, b1=0.0 if zero else b1)
        new_vals = res.trajectory.values if it == 1 else (1 - theta) * w.values + theta * res.trajectory.values
        dist = _l2q(new_vals - w.values, mesh, grid2.dt)
        trace.coef_norms.append(bound)
        trace.defects.append(defect)
        trace.control_costs.append(res.control_cost)
        trace.final_norms.append(res.final_norm)
        trace.distances.append(dist)
        trace.damping.append(theta)
        trace.iterations = it
        w = w.with_values(new_vals)
        prev_coefs = coefs
        if dist <= tol:
            trace.converged = True
            break
        d = trace.distances
        if len(d) >= 2 and d[-1] > d[-2] and theta == 1.0:
            log.info("Picard distance grew; damping with factor 0.5")
            theta = 0.5
        if len(d) >= 6 and all(d[i + 1] >= d[i] for i in range(len(d) - 6, len(d) - 1)):
            raise SolverError("Picard iteration stagnated", {"trace": trace})
    if not trace.converged:
        raise SolverError("Picard iteration did not converge", {"trace": trace})

    U = np.concatenate((U1[:, :-1], res.trajectory.values), axis=1)
    H = np.concatenate((np.zeros((mesh.n + 1, k1)), res.control.values), axis=1)
    glued = replace(res, control=Field(H, mesh, tgrid), trajectory=Field(U, mesh, tgrid))
    return glued, trace


# --------------------------------------------------------------- nonlocal

def nonlocal_source(nspec: NonlocalSpec, u: Field, alpha: float) -> Field:
    """(l(int_0^1 u dx) - 1) (x^alpha u_x)_x on the time levels."""
    mesh = u.mesh
    mass = u.values.T @ mesh.volumes
    factor = np.array([float(nspec.ell(v)) for v in mass]) - 1.0
    return u.with_values(factor[None, :] * flux_divergence(u.values, mesh, alpha))


def nonlocal_residual(nspec: NonlocalSpec, result: WeightedControlResult, alpha: float) -> float:
    """log of the squared effective rho_1 norm of u_t - l(int u)(x^alpha u_x)_x - f 1_omega."""
    u, f = result.state, result.control
    mesh, tgrid = u.mesh, u.tgrid
    U = u.values
    mass = U.T @ mesh.volumes
    ell = np.array([float(nspec.ell(v)) for v in mass])
    res = np.diff(U, axis=1) / tgrid.dt - ell[None, 1:] * flux_divergence(U[:, 1:], mesh, alpha) - f.values
    res[-1, :] = 0.0
    return result.weights.log_norm_sq(res, 1)


def solve_nonlocal_control(nspec: NonlocalSpec, spec: ProblemSpec, u0, params: CarlemanParams,
                           mesh: SpaceMesh, tgrid: TimeGrid, cfg: WeightedConfig = WeightedConfig(),
                           tol: float = 1e-8, maxit: int = 30):
    """Source-term Picard on the weighted control; returns (WeightedControlResult, IterationTrace).

    The distance between successive states is measured in the effective
    rho_1 norm relative to the current state.
    """
    lin = spec.replace(b0=0.0, b1=0.0)
    u0 = initial_values(spec, mesh, u0)
    g = Field(np.zeros((mesh.n + 1, tgrid.m + 1)), mesh, tgrid)
    trace = IterationTrace()
    prev: Optional[WeightedControlResult] = None
    result: Optional[WeightedControlResult] = None
    for it in range(1, maxit + 1):
        x0 = None if prev is None else prev.scaled_control
        result = solve_weighted_control(lin, u0, g, params, mesh, tgrid, cfg, x0=x0)
        trace.iterations = it
        trace.control_costs.append(result.norm_sq("f_rho3"))
        trace.final_norms.append(result.final_norm)
        trace.coef_norms.append(float(np.max(np.abs(g.values))))
        if prev is None:
            base = result.state.values
            diff = base
        else:
            diff = result.state.values - prev.state.values
        scale = math.exp(0.5 * result.weights.log_norm_sq(result.state.values[:, 1:], 1))
        dist = math.exp(0.5 * result.weights.log_norm_sq(diff[:, 1:], 1))
        rel = dist / scale if scale > 0 else dist
        trace.distances.append(rel)
        new_g = nonlocal_source(nspec, result.state, spec.alpha)
        if rel <= tol or np.array_equal(new_g.values, g.values):
            trace.converged = True
            break
        d = trace.distances
        if len(d) >= 4 and d[-1] >= 2 * d[-4]:
            raise LocalRadiusExceeded("nonlocal iteration diverged; reduce |u0|", {"trace": trace})
        g = new_g
        prev = result
    if not trace.converged:
        raise SolverError("nonlocal iteration did not converge", {"trace": trace})
    residual = nonlocal_residual(nspec, result, spec.alpha)
    trace.defects.append(residual)
    return result, trace
