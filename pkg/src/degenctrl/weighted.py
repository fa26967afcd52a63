"""rho-weighted null control of u_t - (x^alpha u_x)_x = f 1_omega + g.

The control minimises

    F(f) = 1/2 int_{omega_T} rho_3^2 |f|^2 + 1/2 int_Q rho_1^2 |u_f|^2

over discrete controls.  rho_1 blows up at t = T, so a state with a finite
weighted norm is pushed to zero at the final time.

log rho_i^2 is of order s * tau(t), i.e. thousands to trillions, so the
weights cannot be formed directly.  Every run fixes a reference level
``ref`` (the smallest log rho_3^2 on the control region) and works with the
*effective* weights

    w_eff = exp(min(log w - ref, cap)),

which rescale the objective by a constant and clip what double precision
could not distinguish from an infinite penalty anyway.  The optimisation and
the reported norms (``log_norms``) use effective weights; the unclipped
values are kept in ``log_norms_exact``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Optional

import numpy as np

from .evolution import (
    ProblemSpec, assemble, flux_divergence, flux_gradient, hs_norm, initial_values,
    pair_source_adjoint, pair_state_source, solve_adjoint, solve_forward,
)
from .grid import Field, SpaceMesh, TimeGrid, log_sum, omega_fractions
from .linalg import conjugate_gradient
from .weights import AFamily, CarlemanParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightedConfig:
    cg_tol: float = 1e-8
    cg_maxit: int = 4000
    log_weight_cap: float = 20.0

    def __post_init__(self) -> None:
        if not 0 < self.cg_tol < 1:
            raise ValueError("cg_tol must lie in (0, 1)")
        if not self.log_weight_cap > 0:
            raise ValueError("log_weight_cap must be positive")


class WeightGrid:
    """log rho_i^2 sampled where the discrete norms need them.

    Node values sit at interval midpoints and pair with the state at the end
    of the interval and with the control on the interval; face values serve
    the gradient terms.
    """

    def __init__(self, mesh: SpaceMesh, tgrid: TimeGrid, params: CarlemanParams,
                 omega: tuple, cap: float = 20.0):
        self.mesh, self.tgrid, self.params, self.cap = mesh, tgrid, params, cap
        self.family = AFamily(tgrid.T, params)
        self._nodes = np.meshgrid(mesh.nodes, tgrid.midpoints, indexing="ij")
        self._faces = np.meshgrid(mesh.midpoints, tgrid.midpoints, indexing="ij")
        self._cache = {}
        chi = omega_fractions(mesh, omega)
        self.ref = float(np.min(self.log_rho_sq(3)[chi > 0]))

    def log_rho_sq(self, i: int, at: str = "nodes") -> np.ndarray:
        key = (i, at)
        if key not in self._cache:
            X, Tm = self._nodes if at == "nodes" else self._faces
            self._cache[key] = 2.0 * self.family.log_rho(i, X, Tm)
        return self._cache[key]

    def effective(self, log_w):
        """Shift by the reference level and clip at the cap (still a log)."""
        return np.minimum(np.asarray(log_w) - self.ref, self.cap)

    def log_eff(self, i: int, at: str = "nodes") -> np.ndarray:
        return self.effective(self.log_rho_sq(i, at))

    def log_dxdt(self, at: str = "nodes") -> np.ndarray:
        h = self.mesh.volumes if at == "nodes" else self.mesh.spacing
        return np.log(h)[:, None] + math.log(self.tgrid.dt) + np.zeros((1, self.tgrid.m))

    def log_norm_sq(self, values: np.ndarray, i: int, at: str = "nodes",
                    exact: bool = False) -> float:
        """log of sum dx dt w_i values^2, w_i the effective (or exact) rho_i^2."""
        lw = self.log_rho_sq(i, at) if exact else self.log_eff(i, at)
        return log_sum(self.log_dxdt(at) + lw, values)


def logaddexp(*vals) -> float:
    vals = [v for v in vals if v != -np.inf]
    if not vals:
        return -np.inf
    top = max(vals)
    if top == np.inf:
        return np.inf
    return top + math.log(sum(math.exp(v - top) for v in vals))


def _exp(v: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.exp(v))


@dataclass
class WeightedControlResult:
    control: Field            # chi * f on the intervals
    state: Field
    log_norms: dict           # name -> log squared norm, effective weights
    log_norms_exact: dict     # same with unclipped weights (log rho^2 itself)
    final_norm: float
    initial_norm: float
    weights: WeightGrid
    cg_iterations: int = 0
    converged: bool = True
    objective_history: list = field(default_factory=list)
    g: Optional[Field] = None
    u0: Optional[np.ndarray] = None
    scaled_control: Optional[np.ndarray] = None  # CG variable sqrt(w3) f, reusable as x0

    def norm_sq(self, name: str) -> float:
        return _exp(self.log_norms[name])

    @property
    def e_norm_sq(self) -> float:
        return self.norm_sq("E")

    @property
    def params(self) -> CarlemanParams:
        return self.weights.params

    @property
    def warning(self) -> bool:
        return not self.converged


def state_residual(u: Field, f: Field, spec: ProblemSpec) -> np.ndarray:
    """(u^{k+1} - u^k)/dt - (x^alpha u_x)_x^{k+1} - f^k on the intervals.

    For a discrete solution this reproduces g; the Dirichlet node is zeroed.
    """
    mesh, tgrid = u.mesh, u.tgrid
    op = assemble(spec.replace(b0=0.0, b1=0.0), mesh, 0.0)
    U = u.values
    out = np.diff(U, axis=1) / tgrid.dt
    for k in range(tgrid.m):
        out[:, k] += op.apply(U[:, k + 1])
    out = out - f.values
    out[-1, :] = 0.0
    return out


def weighted_norms(u: Field, f: Field, g: Optional[Field], u0: np.ndarray, spec: ProblemSpec,
                   weights: WeightGrid, exact: bool = False) -> dict:
    mesh = u.mesh
    alpha = spec.alpha
    ur = u.values[:, 1:]
    nrm = lambda vals, i, at="nodes": weights.log_norm_sq(vals, i, at, exact)  # noqa: E731
    norms = {
        "u_rho1": nrm(ur, 1),
        "f_rho3": nrm(f.values, 3),
        "residual_rho1": nrm(state_residual(u, f, spec), 1),
        "g_rho1": nrm(g.interval_values("right"), 1) if g is not None else -np.inf,
        "u_x_rho2": nrm((mesh.midpoints ** (alpha / 2))[:, None] * flux_gradient(ur, mesh), 2, "faces"),
        "u_t_rho3": nrm(np.diff(u.values, axis=1) / u.tgrid.dt, 3),
        "flux_div_rho3": nrm(flux_divergence(ur, mesh, alpha), 3),
    }
    h1 = hs_norm(u0, "H1alpha", alpha, mesh) ** 2
    norms["u0_H1"] = math.log(h1) if h1 > 0 else -np.inf
    norms["E"] = logaddexp(norms["u_rho1"], norms["f_rho3"], norms["residual_rho1"], norms["u0_H1"])
    return norms


def solve_weighted_control(spec: ProblemSpec, u0, g: Optional[Field], params: CarlemanParams,
                           mesh: SpaceMesh, tgrid: TimeGrid,
                           cfg: WeightedConfig = WeightedConfig(),
                           x0: Optional[np.ndarray] = None) -> WeightedControlResult:
    """CG on the normal equations of F in the scaled variable sqrt(w3) * f.

    ``x0`` warm-starts CG, e.g. with ``scaled_control`` of a nearby problem.
    """
    lin = spec.replace(b0=0.0, b1=0.0)
    u0 = initial_values(spec, mesh, u0)
    chi = omega_fractions(mesh, spec.omega)
    active = chi > 0
    weights = WeightGrid(mesh, tgrid, params, spec.omega, cfg.log_weight_cap)
    w1 = np.exp(weights.log_eff(1))
    w3 = np.exp(weights.log_eff(3))
    scale = np.where(active[:, None], 1.0 / np.sqrt(w3), 0.0)
    vol_chi = mesh.volumes * chi
    dt = tgrid.dt
    zero = np.zeros(mesh.n + 1)

    def inner(a, b):
        return dt * float(np.sum(vol_chi[:, None] * a * b))

    def state_of(c):
        return solve_forward(lin, Field(chi[:, None] * c, mesh, tgrid), mesh, tgrid, u0=zero)

    def pullback(u_vals):
        # gradient of 1/2 int w1 u^2 with respect to the control density
        h = Field(w1 * u_vals[:, 1:], mesh, tgrid)
        return solve_adjoint(lin, h, None, mesh, tgrid).values[:, :-1]

    def matvec(phi):
        return phi + scale * pullback(state_of(scale * phi).values)

    free = solve_forward(lin, g, mesh, tgrid, u0=u0)
    rhs = -scale * pullback(free.values)
    cg = conjugate_gradient(matvec, rhs, inner=inner, tol=cfg.cg_tol, maxiter=cfg.cg_maxit, x0=x0)
    if not cg.converged:
        log.warning("weighted-control CG stopped after %d iterations", cg.iterations)

    f = Field(chi[:, None] * (scale * cg.x), mesh, tgrid)
    u = solve_forward(lin, _sum_sources(f, g), mesh, tgrid, u0=u0)
    return WeightedControlResult(
        control=f, state=u,
        log_norms=weighted_norms(u, f, g, u0, lin, weights),
        log_norms_exact=weighted_norms(u, f, g, u0, lin, weights, exact=True),
        final_norm=mesh.norm(u.values[:, -1]), initial_norm=mesh.norm(u0), weights=weights,
        cg_iterations=cg.iterations, converged=cg.converged, objective_history=cg.objective,
        g=g, u0=u0, scaled_control=cg.x,
    )


def objective_value(result: WeightedControlResult) -> float:
    """F at the returned control, effective weights."""
    return 0.5 * (result.norm_sq("f_rho3") + result.norm_sq("u_rho1"))


def _sum_sources(f: Field, g: Optional[Field]) -> Field:
    if g is None:
        return f
    return f.with_values(f.values + g.interval_values("right"))


def additional_estimates(result: WeightedControlResult) -> dict:
    """Both sides of the higher-order weighted estimate and their ratio."""
    n = result.log_norms
    lhs = logaddexp(n["u_x_rho2"], n["u_t_rho3"], n["flux_div_rho3"])
    rhs = logaddexp(n["u_rho1"], n["f_rho3"], n["g_rho1"], n["u0_H1"])
    if rhs == -np.inf:
        ratio = 0.0 if lhs == -np.inf else math.inf
    else:
        ratio = _exp(lhs - rhs)
    return {"log_lhs": lhs, "log_rhs": rhs, "lhs": _exp(lhs), "rhs": _exp(rhs), "C_emp": ratio}


def beta_lambda(lam: float) -> float:
    """inf over x of m * A, which is e^{2 lam} - e^{lam} for every t."""
    return math.exp(2 * lam) - math.exp(lam)


def log_supremo(u: Field, weights: WeightGrid) -> float:
    """log of sup over levels t < T of eff(M_s / m(t)) (int_0^1 u dx)^2.

    M_s = s * beta_lambda / 2; the exponential factor is made effective with
    the reference level and cap of ``weights``, like every other weight.
    """
    params = weights.params
    M_s = params.s * beta_lambda(params.lam) / 2
    t = u.tgrid.times[:-1]
    mass = u.values[:, :-1].T @ u.mesh.volumes
    with np.errstate(divide="ignore"):
        logs = weights.effective(M_s / weights.family.m(t)) + 2 * np.log(np.abs(mass))
    return float(np.max(logs)) if logs.size else -np.inf


def supremo_check(result: WeightedControlResult) -> dict:
    """The supremo quantity of ``result`` against its squared E-norm."""
    params = result.weights.params
    log_sup = log_supremo(result.state, result.weights)
    log_e = result.log_norms["E"]
    ratio = 0.0 if log_sup == -np.inf else _exp(log_sup - log_e)
    return {"log_sup": log_sup, "sup": _exp(log_sup), "log_e_norm_sq": log_e,
            "e_norm_sq": _exp(log_e), "ratio": ratio,
            "M_s": params.s * beta_lambda(params.lam) / 2}


def transposition_check(spec: ProblemSpec, u: Field, f: Optional[Field], g: Optional[Field],
                        u0, probes) -> float:
    """Largest defect of the transposition identity over the probes (h, v_T).

    The identity is int u h + <u(T), v_T> = <u0, v(0)> + int (f 1_omega + g) v;
    the <u(T), v_T> term vanishes for null-controlled states.
    """
    lin = spec.replace(b0=0.0, b1=0.0)
    mesh, tgrid = u.mesh, u.tgrid
    u0 = initial_values(spec, mesh, u0)
    if f is None:
        src = g
    elif g is None:
        src = f
    else:
        src = f.with_values(f.interval_values("right") + g.interval_values("right"))
    worst = 0.0
    for h, v_T in probes:
        v = solve_adjoint(lin, h, v_T, mesh, tgrid)
        lhs = pair_state_source(u, h) + mesh.inner(u.values[:, -1], v.values[:, -1])
        rhs = mesh.inner(u0, v.values[:, 0]) + pair_source_adjoint(src, v)
        worst = max(worst, abs(lhs - rhs))
    return worst
