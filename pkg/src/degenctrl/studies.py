"""Experiment configurations and the runners behind the command line.

A run is split into independent tasks, each a plain dict, so tasks can be
shipped to worker processes and their rows reassembled in task order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import math
from typing import Optional

import numpy as np

from . import catalog
from .carleman import carleman_a, carleman_sigma, observability_constant, random_terminal_data
from .errors import InvariantViolation
from .evolution import ProblemSpec, solve_forward
from .grid import Field, _check_interval, make_graded_mesh, make_time_grid
from .hum import HumConfig, solve_hum
from .nonlinear import solve_nonlocal_control, solve_semilinear_control
from .weighted import WeightedConfig, additional_estimates, solve_weighted_control, supremo_check
from .weights import CarlemanParams

KINDS = ("forward-convergence", "carleman-sweep", "observability", "hum", "weighted",
         "semilinear", "nonlocal", "window-study")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    problem: dict
    sizes: tuple
    time_steps: Optional[tuple] = None
    gamma: float = 2.0
    s: tuple = (2.0,)
    lam: tuple = (2.0,)
    family: str = "sigma"
    draws: int = 50
    eps: tuple = (1e-4,)
    cg_tol: float = 1e-8
    cg_maxit: int = 500
    log_weight_cap: float = 20.0
    nonlinearity: dict = field(default_factory=lambda: {"name": "zero"})
    ell: dict = field(default_factory=lambda: {"name": "one"})
    picard_tol: float = 1e-6
    picard_maxit: int = 30
    windows: tuple = ((0.0, 0.3), (0.5, 0.8))
    seed: int = 0
    output: str = "out"
    dump_fields: bool = False

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        return ProblemSpec(
            alpha=p["alpha"], T=p["T"], omega=tuple(p["omega"]),
            b0=catalog.coefficient(p.get("b0")), b1=catalog.coefficient(p.get("b1")),
            u0=catalog.initial_datum(p.get("u0")), geometric=p.get("geometric", True),
        )

    def to_dict(self) -> dict:
        return asdict(self)


_PROBLEM_KEYS = {"alpha", "T", "omega", "b0", "b1", "u0", "geometric"}
_TOP_KEYS = {"kind", "problem", "grid", "carleman", "hum", "weighted", "nonlinear", "windows",
             "seed", "output", "dump_fields"}


def _tuple_of(value, name: str, cast=float) -> tuple:
    if not isinstance(value, (list, tuple)):
        value = [value]
    if not value:
        raise ConfigError(name, "list must be nonempty")
    try:
        return tuple(cast(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def parse_config(raw: dict) -> ExperimentConfig:
    """Check and resolve a config dict; no computation is done."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
    problem = dict(raw.get("problem", {}))
    bad = set(problem) - _PROBLEM_KEYS
    if bad:
        raise ConfigError(f"problem.{sorted(bad)[0]}", "unknown key")
    problem.setdefault("alpha", 2.0)
    problem.setdefault("T", 1.0)
    problem.setdefault("omega", [0.0, 0.3])
    grid = raw.get("grid", {})
    kw = dict(kind=kind, problem=problem)
    kw["sizes"] = _tuple_of(grid.get("n", [64]), "grid.n", int)
    if grid.get("m") is not None:
        kw["time_steps"] = _tuple_of(grid["m"], "grid.m", int)
    kw["gamma"] = float(grid.get("gamma", 2.0))
    car = raw.get("carleman", {})
    kw["s"] = _tuple_of(car.get("s", [2.0]), "carleman.s")
    kw["lam"] = _tuple_of(car.get("lambda", [2.0]), "carleman.lambda")
    kw["family"] = car.get("family", "sigma")
    kw["draws"] = int(car.get("draws", 50))
    hum = raw.get("hum", {})
    kw["eps"] = _tuple_of(hum.get("eps", [1e-4]), "hum.eps")
    weighted = raw.get("weighted", {})
    kw["cg_tol"] = float(hum.get("cg_tol", weighted.get("cg_tol", 1e-8)))
    kw["cg_maxit"] = int(hum.get("cg_maxit", weighted.get("cg_maxit", 500 if kind != "weighted" else 4000)))
    kw["log_weight_cap"] = float(weighted.get("log_weight_cap", 20.0))
    nl = raw.get("nonlinear", {})
    kw["nonlinearity"] = nl.get("g", {"name": "zero"})
    kw["ell"] = nl.get("ell", {"name": "one"})
    kw["picard_tol"] = float(nl.get("tol", 1e-6))
    kw["picard_maxit"] = int(nl.get("maxit", 30))
    if "windows" in raw:
        wins = raw["windows"]
        if not isinstance(wins, list):
            raise ConfigError("windows", "must be a list of [a, b] pairs")
        out = []
        for i, w in enumerate(wins):
            try:
                out.append(_check_interval(tuple(w)))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"windows[{i}]", str(exc)) from None
        kw["windows"] = tuple(out)
    kw["seed"] = int(raw.get("seed", 0))
    kw["output"] = str(raw.get("output", "out"))
    kw["dump_fields"] = bool(raw.get("dump_fields", False))
    cfg = ExperimentConfig(**kw)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Invariant checks that need no solve; raises ConfigError."""
    try:
        spec = cfg.problem_spec()
    except ValueError as exc:
        raise ConfigError("problem", str(exc)) from None
    if any(n < 2 for n in cfg.sizes):
        raise ConfigError("grid.n", "every mesh needs at least 2 cells")
    if cfg.time_steps is not None and any(m < 1 for m in cfg.time_steps):
        raise ConfigError("grid.m", "time steps must be positive")
    if cfg.family not in ("sigma", "a"):
        raise ConfigError("carleman.family", "must be 'sigma' or 'a'")
    try:
        for s in cfg.s:
            for lam in cfg.lam:
                CarlemanParams(s, lam)
        for e in cfg.eps:
            HumConfig(eps=e, cg_tol=cfg.cg_tol, cg_maxit=cfg.cg_maxit)
        WeightedConfig(cg_tol=cfg.cg_tol, cg_maxit=cfg.cg_maxit, log_weight_cap=cfg.log_weight_cap)
    except ValueError as exc:
        raise ConfigError("parameters", str(exc)) from None
    if cfg.kind == "semilinear":
        try:
            catalog.semilinear(cfg.nonlinearity, spec.alpha).check(T=spec.T)
        except ValueError as exc:
            raise ConfigError("nonlinear.g", str(exc)) from None
    if cfg.kind == "nonlocal":
        try:
            catalog.nonlocal_coefficient(cfg.ell)
        except ValueError as exc:
            raise ConfigError("nonlinear.ell", str(exc)) from None
    if cfg.kind == "carleman-sweep" and cfg.family == "a" and not (spec.b0 == 0 and spec.b1 == 0):
        raise ConfigError("problem", "the A-family estimate needs b0 = b1 = 0")


# ------------------------------------------------------------------ tasks

def _time_steps(cfg: ExperimentConfig, i: int, n: int) -> int:
    if cfg.time_steps is None:
        return n
    return cfg.time_steps[min(i, len(cfg.time_steps) - 1)]


def make_tasks(cfg: ExperimentConfig) -> list:
    k = cfg.kind
    if k == "forward-convergence":
        return [{"series": "time"}, {"series": "space"}]
    if k in ("carleman-sweep", "observability", "weighted"):
        return [{"n": n, "m": _time_steps(cfg, i, n), "s": s, "lam": lam}
                for i, n in enumerate(cfg.sizes) for s in cfg.s for lam in cfg.lam]
    if k == "hum":
        return [{"n": n, "m": _time_steps(cfg, i, n), "eps": e}
                for i, n in enumerate(cfg.sizes) for e in cfg.eps]
    if k == "semilinear":
        return [{"n": n, "m": _time_steps(cfg, i, n), "eps": cfg.eps[0]} for i, n in enumerate(cfg.sizes)]
    if k == "nonlocal":
        return [{"n": n, "m": _time_steps(cfg, i, n), "s": cfg.s[0], "lam": cfg.lam[0]}
                for i, n in enumerate(cfg.sizes)]
    if k == "window-study":
        return [{"n": n, "m": _time_steps(cfg, i, n), "a": w[0], "b": w[1], "eps": cfg.eps[0]}
                for w in cfg.windows for i, n in enumerate(cfg.sizes)]
    raise ConfigError("kind", f"unknown kind {k!r}")


def _base(cfg: ExperimentConfig) -> dict:
    p = cfg.problem
    return {"kind": cfg.kind, "alpha": float(p["alpha"]), "T": float(p["T"]),
            "omega_a": float(p["omega"][0]), "omega_b": float(p["omega"][1])}


def run_task(cfg_dict: dict, task: dict) -> dict:
    """Execute one task; returns {"rows": [...], "fields": {...}, "converged": bool}."""
    cfg = ExperimentConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg_dict.items()})
    return _RUNNERS[cfg.kind](cfg, task)


def _grids(cfg, task):
    return make_graded_mesh(task["n"], cfg.gamma), make_time_grid(cfg.problem["T"], task["m"])


def _run_forward(cfg, task):
    rows = manufactured_study(cfg.problem["alpha"], series=task["series"], gamma=cfg.gamma,
                              sizes=cfg.sizes, T=cfg.problem["T"])
    return {"rows": [dict(_base(cfg), **r) for r in rows], "fields": {}, "converged": True}


def _run_carleman(cfg, task):
    spec = cfg.problem_spec()
    mesh, tgrid = _grids(cfg, task)
    params = CarlemanParams(task["s"], task["lam"])
    fn = carleman_sigma if cfg.family == "sigma" else carleman_a
    rng = np.random.default_rng(cfg.seed)
    worst = None
    finite = True
    for _ in range(cfg.draws):
        rep = fn(spec, random_terminal_data(mesh, rng), None, params, mesh, tgrid)
        lr = rep.log_ratio
        finite &= lr is not None and math.isfinite(lr)
        if lr is not None and (worst is None or lr > worst.log_ratio):
            worst = rep
    row = dict(_base(cfg), **worst.row(mesh, tgrid))
    row.update(draws=cfg.draws, log_ratio=worst.log_ratio, all_finite=finite)
    return {"rows": [row], "fields": {}, "converged": True}


def _run_observability(cfg, task):
    spec = cfg.problem_spec().replace(geometric=False)
    mesh, tgrid = _grids(cfg, task)
    params = CarlemanParams(task["s"], task["lam"])
    rng = np.random.default_rng(cfg.seed)
    logs, violation = [], False
    for _ in range(cfg.draws):
        obs = observability_constant(spec, random_terminal_data(mesh, rng), params, cfg.family, mesh, tgrid)
        violation |= obs.violation
        if obs.log_constant is not None:
            logs.append(obs.log_constant)
    row = dict(_base(cfg), n=mesh.n, m=tgrid.m, s=params.s, **{"lambda": params.lam},
               family=cfg.family, draws=cfg.draws, log_C=max(logs) if logs else math.nan,
               violation=violation)
    return {"rows": [row], "fields": {}, "converged": True}


def _run_hum(cfg, task):
    spec = cfg.problem_spec()
    mesh, tgrid = _grids(cfg, task)
    res = solve_hum(spec, None, HumConfig(task["eps"], cfg.cg_tol, cfg.cg_maxit), mesh, tgrid)
    bound = res.free_final_norm ** 2 / res.eps
    if res.control_cost > bound * (1 + 1e-8) + 1e-300 or res.final_norm > res.free_final_norm * (1 + 1e-8) + 1e-300:
        raise InvariantViolation("HUM control does not improve on the zero control")
    row = dict(_base(cfg), n=mesh.n, m=tgrid.m, eps=res.eps, final_norm=res.final_norm,
               control_cost=res.control_cost, J_value=res.J_value, free_final_norm=res.free_final_norm,
               cost_bound=bound, final_below_eps=res.final_norm <= res.eps,
               optimality_residual=res.optimality_residual, terminal_residual=res.terminal_residual,
               cg_iterations=res.cg_iterations,
               converged=res.converged)
    fields = {"control": res.control.values, "trajectory": res.trajectory.values} if cfg.dump_fields else {}
    return {"rows": [row], "fields": fields, "converged": res.converged}


def _weighted_row(cfg, res, mesh, tgrid):
    est = additional_estimates(res)
    sup = supremo_check(res)
    row = dict(_base(cfg), n=mesh.n, m=tgrid.m, s=res.params.s, **{"lambda": res.params.lam},
               final_norm=res.final_norm, initial_norm=res.initial_norm)
    row.update({f"log_{k}": v for k, v in res.log_norms.items()})
    row.update(C_emp=est["C_emp"], supremo_ratio=sup["ratio"], cg_iterations=res.cg_iterations,
               converged=res.converged)
    return row


def _run_weighted(cfg, task):
    spec = cfg.problem_spec()
    mesh, tgrid = _grids(cfg, task)
    wcfg = WeightedConfig(cfg.cg_tol, cfg.cg_maxit, cfg.log_weight_cap)
    res = solve_weighted_control(spec, None, None, CarlemanParams(task["s"], task["lam"]), mesh, tgrid, wcfg)
    fields = {"control": res.control.values, "state": res.state.values} if cfg.dump_fields else {}
    return {"rows": [_weighted_row(cfg, res, mesh, tgrid)], "fields": fields, "converged": res.converged}


def _run_semilinear(cfg, task):
    spec = cfg.problem_spec()
    mesh, tgrid = _grids(cfg, task)
    sspec = catalog.semilinear(cfg.nonlinearity, spec.alpha)
    res, trace = solve_semilinear_control(sspec, spec, None, HumConfig(task["eps"], cfg.cg_tol, cfg.cg_maxit),
                                          mesh, tgrid, tol=cfg.picard_tol, maxit=cfg.picard_maxit)
    rows = [dict(_base(cfg), n=mesh.n, m=tgrid.m, eps=task["eps"], g=sspec.name, **r) for r in trace.rows()]
    for r in rows:
        r["final_state_norm"] = res.final_norm
        r["converged"] = trace.converged
    fields = {"control": res.control.values, "trajectory": res.trajectory.values} if cfg.dump_fields else {}
    return {"rows": rows, "fields": fields, "converged": trace.converged and res.converged}


def _run_nonlocal(cfg, task):
    spec = cfg.problem_spec()
    mesh, tgrid = _grids(cfg, task)
    nspec = catalog.nonlocal_coefficient(cfg.ell)
    wcfg = WeightedConfig(cfg.cg_tol, cfg.cg_maxit, cfg.log_weight_cap)
    res, trace = solve_nonlocal_control(nspec, spec, None, CarlemanParams(task["s"], task["lam"]), mesh, tgrid,
                                        wcfg, tol=cfg.picard_tol, maxit=cfg.picard_maxit)
    rows = [dict(_base(cfg), n=mesh.n, m=tgrid.m, ell=nspec.name, **r) for r in trace.rows()]
    for r in rows:
        r["final_state_norm"] = res.final_norm
        r["converged"] = trace.converged
    fields = {"control": res.control.values, "state": res.state.values} if cfg.dump_fields else {}
    return {"rows": rows, "fields": fields, "converged": trace.converged}


def _run_window(cfg, task):
    spec = cfg.problem_spec().replace(omega=(task["a"], task["b"]), geometric=False)
    mesh, tgrid = _grids(cfg, task)
    res = solve_hum(spec, None, HumConfig(task["eps"], cfg.cg_tol, cfg.cg_maxit), mesh, tgrid)
    row = dict(_base(cfg), n=mesh.n, m=tgrid.m, window_a=task["a"], window_b=task["b"], eps=task["eps"],
               control_cost=res.control_cost, final_norm=res.final_norm, cg_iterations=res.cg_iterations,
               converged=res.converged)
    return {"rows": [row], "fields": {}, "converged": res.converged}


_RUNNERS = {
    "forward-convergence": _run_forward, "carleman-sweep": _run_carleman, "observability": _run_observability,
    "hum": _run_hum, "weighted": _run_weighted, "semilinear": _run_semilinear, "nonlocal": _run_nonlocal,
    "window-study": _run_window,
}


# --------------------------------------------------------- manufactured

def manufactured_solution(alpha: float):
    """u = e^{-t}(1 - x) and its source e^{-t}(alpha x^{alpha-1} - (1 - x))."""
    u = lambda x, t: np.exp(-t) * (1.0 - x)  # noqa: E731
    f = lambda x, t: np.exp(-t) * (alpha * x ** (alpha - 1) - (1.0 - x))  # noqa: E731
    return u, f


def _l2q_levels(err: np.ndarray, vol: np.ndarray, dt: float) -> float:
    return math.sqrt(dt * float(np.sum(vol[:, None] * err[:, 1:] ** 2)))


def manufactured_study(alpha: float = 2.0, series: str = "time", gamma: float = 2.0,
                       sizes=(64, 128, 256), T: float = 1.0, n_fixed: int = 512,
                       m_fixed: int = 32, refine: int = 4) -> list:
    """Discrete L2(Q) errors and observed orders.

    ``time``: m runs over ``sizes`` on a fixed fine mesh, errors against the
    exact solution.  ``space``: n runs over ``sizes`` at fixed m, errors
    against a mesh ``refine`` times finer with the same time grid, compared
    on the shared (nested) nodes; this isolates the spatial error, which the
    exact solution cannot because the time error dominates it.
    """
    spec = ProblemSpec(alpha=alpha, T=T, omega=(0.0, 0.3))
    u_ex, f_ex = manufactured_solution(alpha)
    rows = []
    if series == "time":
        mesh = make_graded_mesh(n_fixed, gamma)
        for m in sizes:
            tgrid = make_time_grid(T, m)
            f = Field.from_function(f_ex, mesh, tgrid)
            u = solve_forward(spec, f, mesh, tgrid, u0=u_ex(mesh.nodes, 0.0))
            X, Tt = np.meshgrid(mesh.nodes, tgrid.times, indexing="ij")
            rows.append({"series": "time", "n": n_fixed, "m": m,
                         "error": _l2q_levels(u.values - u_ex(X, Tt), mesh.volumes, tgrid.dt)})
    elif series == "space":
        tgrid = make_time_grid(T, m_fixed)
        ref_n = refine * max(sizes)
        ref_mesh = make_graded_mesh(ref_n, gamma)
        f_ref = Field.from_function(f_ex, ref_mesh, tgrid)
        ref = solve_forward(spec, f_ref, ref_mesh, tgrid, u0=u_ex(ref_mesh.nodes, 0.0)).values
        for n in sizes:
            if ref_n % n:
                raise ValueError("sizes must divide the reference size")
            mesh = make_graded_mesh(n, gamma)
            f = Field.from_function(f_ex, mesh, tgrid)
            u = solve_forward(spec, f, mesh, tgrid, u0=u_ex(mesh.nodes, 0.0))
            err = u.values - ref[:: ref_n // n]
            rows.append({"series": "space", "n": n, "m": m_fixed,
                         "error": _l2q_levels(err, mesh.volumes, tgrid.dt)})
    else:
        raise ValueError("series must be 'time' or 'space'")
    for prev, cur in zip(rows, rows[1:]):
        key = "m" if series == "time" else "n"
        cur["order"] = math.log(prev["error"] / cur["error"]) / math.log(cur[key] / prev[key])
    rows[0]["order"] = math.nan
    return rows
