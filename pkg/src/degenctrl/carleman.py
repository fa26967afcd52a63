"""Numerical evaluation of both sides of the Carleman and observability inequalities.

All integrals are kept as logarithms because the weights range over
thousands of orders of magnitude (e^{-2 s sigma} is about e^{-48000} at
s = lam = 2, T = 1).  Ratios are formed from log differences.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Optional

import numpy as np

from .evolution import ProblemSpec, flux_divergence, flux_gradient, solve_adjoint
from .grid import Field, SpaceMesh, TimeGrid, log_sum, omega_fractions
from .weights import AFamily, CarlemanParams, SigmaFamily

LHS_TERMS = ("v_t", "flux_div", "grad", "v")
RHS_TERMS = ("source", "observation")


def _exp(v: float) -> float:
    with np.errstate(over="ignore", under="ignore"):
        return float(np.exp(v))


def log_ratio(log_num: float, log_den: float) -> Optional[float]:
    """log(num/den); None for 0/0, +inf when only the denominator vanishes."""
    if log_den == -np.inf:
        return None if log_num == -np.inf else np.inf
    return log_num - log_den


@dataclass(frozen=True)
class CarlemanReport:
    params: CarlemanParams
    family: str
    log_lhs_terms: dict
    log_rhs_terms: dict

    @property
    def lhs_terms(self) -> dict:
        return {k: _exp(v) for k, v in self.log_lhs_terms.items()}

    @property
    def rhs_terms(self) -> dict:
        return {k: _exp(v) for k, v in self.log_rhs_terms.items()}

    @property
    def log_lhs(self) -> float:
        return _logsumexp(self.log_lhs_terms.values())

    @property
    def log_rhs(self) -> float:
        return _logsumexp(self.log_rhs_terms.values())

    @property
    def log_ratio(self) -> Optional[float]:
        return log_ratio(self.log_lhs, self.log_rhs)

    @property
    def ratio(self) -> float:
        """LHS/RHS; nan is the 0/0 sentinel."""
        lr = self.log_ratio
        return math.nan if lr is None else _exp(lr)

    @property
    def violation(self) -> bool:
        """RHS vanished while LHS did not."""
        return self.log_ratio == np.inf

    def row(self, mesh: SpaceMesh, tgrid: TimeGrid) -> dict:
        out = {"n": mesh.n, "m": tgrid.m, "s": self.params.s, "lambda": self.params.lam,
               "family": self.family}
        for k, v in self.log_lhs_terms.items():
            out[f"log_lhs_{k}"] = v
        for k, v in self.log_rhs_terms.items():
            out[f"log_rhs_{k}"] = v
        out["ratio"] = self.ratio
        return out


def _logsumexp(vals) -> float:
    vals = [v for v in vals if v != -np.inf]
    if not vals:
        return -np.inf
    top = max(vals)
    return top + math.log(sum(math.exp(v - top) for v in vals))


class _Sampler:
    """Time-integrated log weights of one family on every interval.

    e^{-2 s sigma} is a narrow bump around T/2 (width about 1/880 at
    s = lam = 2, T = 1), far narrower than a practical time step.  The data v
    are held constant on each interval while the weight is integrated with
    ``sub`` midpoint samples, so the quadrature does not depend on where the
    time nodes fall relative to the bump.
    """

    def __init__(self, family: str, T: float, params: CarlemanParams,
                 mesh: SpaceMesh, tgrid: TimeGrid, sub: int = 64):
        if family not in ("sigma", "a"):
            raise ValueError(f"unknown weight family {family!r}")
        if sub < 1:
            raise ValueError("sub must be at least 1")
        self.family = family
        self.params = params
        self.mesh, self.tgrid, self.sub = mesh, tgrid, sub
        self.fam = SigmaFamily(T, params) if family == "sigma" else AFamily(T, params)
        frac = (np.arange(sub) + 0.5) / sub
        self.t_sub = (tgrid.times[:-1, None] + tgrid.dt * frac[None, :]).ravel()
        self._cache = {}

    def _log_damp(self, X, Tm) -> np.ndarray:
        """log e^{-2 s sigma} or log e^{-2 s A}."""
        if self.family == "sigma":
            return self.fam.log_weight(X, Tm, 0.0)
        return -2.0 * self.params.s * self.fam.A(X, Tm)

    def _log_xi(self, X, Tm) -> np.ndarray:
        if self.family == "sigma":
            return self.fam.log_xi(X, Tm)
        return self.fam.log_zeta(X, Tm)

    def log_weight(self, at: str, power: float) -> np.ndarray:
        """log of h_x * int over each interval of e^{-2s.} xi^power dt."""
        key = (at, power)
        if key not in self._cache:
            self._cache[key] = self._integrate(at, power)
        return self._cache[key]

    def _integrate(self, at: str, power: float) -> np.ndarray:
        x = self.mesh.nodes if at == "nodes" else self.mesh.midpoints
        h = self.mesh.volumes if at == "nodes" else self.mesh.spacing
        X, Tm = np.meshgrid(x, self.t_sub, indexing="ij")
        lw = self._log_damp(X, Tm) + power * self._log_xi(X, Tm)
        lw = lw.reshape(len(x), self.tgrid.m, self.sub)
        top = np.max(lw, axis=2, keepdims=True)
        safe = np.where(np.isfinite(top), top, 0.0)
        with np.errstate(divide="ignore"):
            acc = safe[..., 0] + np.log(np.sum(np.exp(lw - safe), axis=2))
        acc = np.where(np.isfinite(top[..., 0]), acc, top[..., 0])
        return acc + math.log(self.tgrid.dt / self.sub) + np.log(h)[:, None]


def _terms(spec: ProblemSpec, v: Field, h: Optional[Field], sampler: _Sampler,
           obs_power: float) -> tuple:
    mesh, tgrid = v.mesh, v.tgrid
    s, lam = sampler.params.s, sampler.params.lam
    alpha = spec.alpha
    V = v.values
    vk = V[:, :-1]  # interval k pairs with level k for the backward equation
    vt = np.diff(V, axis=1) / tgrid.dt
    fd = flux_divergence(vk, mesh, alpha)
    grad = (mesh.midpoints ** (alpha / 2))[:, None] * flux_gradient(vk, mesh)

    ls, ll = math.log(s), math.log(lam)
    w_minus = sampler.log_weight("nodes", -1.0)
    w_cube = sampler.log_weight("nodes", 3.0)
    lhs = {
        "v_t": log_sum(w_minus - ls - ll, vt),
        "flux_div": log_sum(w_minus - ls - ll, fd),
        "grad": log_sum(sampler.log_weight("faces", 1.0) + ls + 2 * ll, grad),
        "v": log_sum(w_cube + 3 * ls + 4 * ll, vk),
    }
    chi = omega_fractions(mesh, spec.omega)
    with np.errstate(divide="ignore"):
        lchi = np.log(chi)[:, None]
    hv = np.zeros_like(vk) if h is None else h.interval_values("left")
    w_obs = w_cube if obs_power == 3.0 else sampler.log_weight("nodes", obs_power)
    rhs = {
        "source": log_sum(sampler.log_weight("nodes", 0.0), hv),
        "observation": log_sum(w_obs + lchi + 3 * ls + 4 * ll, vk),
    }
    return lhs, rhs


_SAMPLERS: dict = {}


def _sampler(family: str, T: float, params: CarlemanParams, mesh: SpaceMesh,
             tgrid: TimeGrid) -> _Sampler:
    key = (family, T, params.s, params.lam, mesh.nodes.tobytes(), tgrid.T, tgrid.m)
    if key not in _SAMPLERS:
        if len(_SAMPLERS) > 16:
            _SAMPLERS.clear()
        _SAMPLERS[key] = _Sampler(family, T, params, mesh, tgrid)
    return _SAMPLERS[key]


def carleman_sigma(spec: ProblemSpec, v_T, h: Optional[Field], params: CarlemanParams,
                   mesh: SpaceMesh, tgrid: TimeGrid) -> CarlemanReport:
    v = solve_adjoint(spec, h, v_T, mesh, tgrid)
    sampler = _sampler("sigma", spec.T, params, mesh, tgrid)
    lhs, rhs = _terms(spec, v, h, sampler, obs_power=3.0)
    return CarlemanReport(params, "sigma", lhs, rhs)


def carleman_a(spec: ProblemSpec, v_T, h: Optional[Field], params: CarlemanParams,
               mesh: SpaceMesh, tgrid: TimeGrid) -> CarlemanReport:
    """Same structure with (tau, zeta, A) and zeta^6 on the observation term."""
    if not (np.isscalar(spec.b0) and np.isscalar(spec.b1) and spec.b0 == 0 and spec.b1 == 0):
        raise ValueError("the A-family estimate is stated for b0 = b1 = 0")
    v = solve_adjoint(spec, h, v_T, mesh, tgrid)
    sampler = _sampler("a", spec.T, params, mesh, tgrid)
    lhs, rhs = _terms(spec, v, h, sampler, obs_power=6.0)
    return CarlemanReport(params, "a", lhs, rhs)


@dataclass(frozen=True)
class ObservabilityResult:
    log_numerator: float
    log_denominator: float

    @property
    def log_constant(self) -> Optional[float]:
        return log_ratio(self.log_numerator, self.log_denominator)

    @property
    def constant(self) -> float:
        lc = self.log_constant
        return math.nan if lc is None else _exp(lc)

    @property
    def violation(self) -> bool:
        return self.log_constant == np.inf


def observability_constant(spec: ProblemSpec, v_T, params: CarlemanParams, family: str,
                           mesh: SpaceMesh, tgrid: TimeGrid) -> ObservabilityResult:
    """|v(0)|^2 over the weighted observation integral, with h = 0."""
    v = solve_adjoint(spec, None, v_T, mesh, tgrid)
    sampler = _sampler(family, spec.T, params, mesh, tgrid)
    chi = omega_fractions(mesh, spec.omega)
    with np.errstate(divide="ignore"):
        lchi = np.log(chi)[:, None]
    if family == "sigma":
        lw = sampler.log_weight("nodes", 3.0) + lchi
    else:
        # s^3 lam^4 rho_3^{-2} = s^3 lam^4 e^{-2sA} zeta^6
        lw = sampler.log_weight("nodes", 6.0) + lchi + 3 * math.log(params.s) + 4 * math.log(params.lam)
    v0 = v.values[:, 0]
    num = mesh.inner(v0, v0)
    return ObservabilityResult(math.log(num) if num > 0 else -np.inf, log_sum(lw, v.values[:, :-1]))


def random_terminal_data(mesh: SpaceMesh, rng: np.random.Generator, modes: int = 8) -> np.ndarray:
    """Unit-norm v_T drawn from the first ``modes`` Dirichlet-at-1 cosine modes.

    Drawing coefficients of a fixed smooth basis keeps the distribution of the
    data independent of the mesh, so constants can be compared across meshes.
    """
    k = np.arange(1, modes + 1)
    coef = rng.standard_normal(modes) / k
    vals = np.cos((k[None, :] - 0.5) * np.pi * mesh.nodes[:, None]) @ coef
    vals[-1] = 0.0
    return vals / mesh.norm(vals)


def empirical_constant(spec: ProblemSpec, params: CarlemanParams, mesh: SpaceMesh,
                       tgrid: TimeGrid, draws: int = 50, seed: int = 0,
                       family: str = "sigma", kind: str = "carleman") -> dict:
    """Max over random unit v_T (h = 0) of the Carleman ratio or the observability constant.

    Returns the log of the max, the max itself and whether every draw gave a
    finite ratio.  The same seed gives the same draws on every mesh.
    """
    rng = np.random.default_rng(seed)
    logs = []
    for _ in range(draws):
        vT = random_terminal_data(mesh, rng)
        if kind == "carleman":
            fn = carleman_sigma if family == "sigma" else carleman_a
            lr = fn(spec, vT, None, params, mesh, tgrid).log_ratio
        elif kind == "observability":
            lr = observability_constant(spec, vT, params, family, mesh, tgrid).log_constant
        else:
            raise ValueError(f"unknown kind {kind!r}")
        logs.append(math.nan if lr is None else lr)
    arr = np.array(logs)
    finite = bool(np.all(np.isfinite(arr)))
    top = float(np.nanmax(arr)) if np.any(~np.isnan(arr)) else math.nan
    return {"log_C": top, "C": _exp(top), "all_finite": finite, "log_ratios": logs}
