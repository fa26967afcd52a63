"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so failing criteria still report their measured values.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import record
from degenctrl import catalog, cli
from degenctrl.carleman import carleman_a, carleman_sigma, empirical_constant, random_terminal_data
from degenctrl.evolution import ProblemSpec, duality_defect, solve_adjoint, solve_forward
from degenctrl.grid import Field, make_graded_mesh, make_time_grid
from degenctrl.hum import HumConfig, gramian_matrix, solve_hum
from degenctrl.nonlinear import solve_nonlocal_control, solve_semilinear_control
from degenctrl.studies import manufactured_study
from degenctrl.weighted import additional_estimates, solve_weighted_control, supremo_check
from degenctrl.weights import AFamily, CarlemanParams

pytestmark = pytest.mark.slow

ONE_MINUS_X = lambda x: 1 - x  # noqa: E731


def test_criterion_1_manufactured_convergence():
    start = time.perf_counter()
    t_rows = manufactured_study(2.0, "time", 2.0, (64, 128, 256))
    s_rows = manufactured_study(2.0, "space", 2.0, (64, 128, 256))
    elapsed = time.perf_counter() - start
    t_orders = [r["order"] for r in t_rows[1:]]
    s_orders = [r["order"] for r in s_rows[1:]]
    ok = (all(abs(o - 1.0) <= 0.3 for o in t_orders) and all(abs(o - 2.0) <= 0.4 for o in s_orders)
          and elapsed < 10)
    record(1, ok, f"time orders {np.round(t_orders, 3).tolist()}, space orders {np.round(s_orders, 3).tolist()}, "
                  f"{elapsed:.2f} s")
    assert ok


def test_criterion_2_duality_and_gramian():
    rng = np.random.default_rng(2)
    mesh, tg = make_graded_mesh(32), make_time_grid(1.0, 32)
    spec = ProblemSpec(alpha=2.0, T=1.0, b0=lambda x, t: 1 + x * t, b1=lambda x, t: np.cos(2 * x))
    worst = 0.0
    for _ in range(20):
        u0 = rng.standard_normal(33)
        f = Field(rng.standard_normal((33, 32)), mesh, tg)
        h = Field(rng.standard_normal((33, 32)), mesh, tg)
        u = solve_forward(spec, f, mesh, tg, u0=u0)
        v = solve_adjoint(spec, h, rng.standard_normal(33), mesh, tg)
        worst = max(worst, abs(duality_defect(u, f, v, h)))
    m16, t16 = make_graded_mesh(16), make_time_grid(1.0, 16)
    S = np.diag(m16.volumes[:16]) @ gramian_matrix(ProblemSpec(alpha=2.0, T=1.0), m16, t16)
    asym = float(np.max(np.abs(S - S.T)))
    min_eig = float(np.linalg.eigvalsh(0.5 * (S + S.T)).min())
    ok = worst <= 1e-9 and asym <= 1e-10 and min_eig >= -1e-12
    record(2, ok, f"max duality defect {worst:.2e}, Gramian asymmetry {asym:.2e}, min eigenvalue {min_eig:.2e}")
    assert ok


@pytest.mark.parametrize("alpha", [2.0, 3.0])
def test_criterion_3_hum(alpha):
    mesh, tg = make_graded_mesh(128), make_time_grid(0.5, 128)
    spec = ProblemSpec(alpha=alpha, T=0.5, omega=(0.0, 0.3))
    ladder = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    start = time.perf_counter()
    runs = [solve_hum(spec, ONE_MINUS_X, HumConfig(eps=e, cg_maxit=4000), mesh, tg) for e in ladder]
    elapsed = time.perf_counter() - start
    finals = [r.final_norm for r in runs]
    costs = [r.control_cost for r in runs]
    decreasing = all(a > b for a, b in zip(finals, finals[1:]))
    bounded = all(r.control_cost <= r.free_final_norm ** 2 / r.eps for r in runs)
    bottom = costs[-3:]
    plateau = max(bottom) / min(bottom)
    ok = decreasing and bounded and plateau <= 2.0 and elapsed < 120 and all(r.converged for r in runs)
    record(3, ok, f"alpha={alpha:g}: final norms {[f'{v:.2e}' for v in finals]}, costs {[f'{v:.3g}' for v in costs]}, "
                  f"bottom-rung cost ratio {plateau:.2f} (<= 2), {elapsed:.1f} s")
    assert ok


def test_criterion_4_carleman_homogeneity():
    rng = np.random.default_rng(4)
    mesh, tg = make_graded_mesh(48), make_time_grid(1.0, 48)
    spec = ProblemSpec(alpha=2.0, T=1.0, omega=(0.0, 0.3))
    params = CarlemanParams(2.0, 2.0)
    worst = 0.0
    for fn in (carleman_sigma, carleman_a):
        vT = random_terminal_data(mesh, rng)
        h = Field(rng.standard_normal((49, 48)), mesh, tg)
        one = fn(spec, vT, h, params, mesh, tg)
        two = fn(spec, 2 * vT, h * 2.0, params, mesh, tg)
        for a, b in ((one.log_lhs_terms, two.log_lhs_terms), (one.log_rhs_terms, two.log_rhs_terms)):
            for k in a:
                # relative error of the factor 4, measured in log space
                worst = max(worst, abs(math.expm1(b[k] - a[k] - math.log(4))))
    ok = worst <= 1e-10
    record(4, ok, f"max relative deviation from x4 over both families: {worst:.2e}")
    assert ok


def test_criterion_5_empirical_constants():
    spec = ProblemSpec(alpha=2.0, T=1.0, omega=(0.0, 0.3))
    params = CarlemanParams(2.0, 2.0)
    out = {}
    for n in (128, 256):
        mesh, tg = make_graded_mesh(n), make_time_grid(1.0, n)
        out[n] = (empirical_constant(spec, params, mesh, tg, draws=50, seed=5),
                  empirical_constant(spec, params, mesh, tg, draws=50, seed=5, kind="observability"))
    car = abs(out[256][0]["log_C"] - out[128][0]["log_C"])
    obs = abs(out[256][1]["log_C"] - out[128][1]["log_C"])
    finite = all(o[0]["all_finite"] and o[1]["all_finite"] for o in out.values())
    ok = car <= math.log(2) and obs <= math.log(2) and finite
    record(5, ok, f"log C_emp {out[128][0]['log_C']:.6g} -> {out[256][0]['log_C']:.6g}, "
                  f"log C_obs {out[128][1]['log_C']:.8g} -> {out[256][1]['log_C']:.8g} "
                  f"(changes within log 2 = 0.693), all ratios finite: {finite}")
    assert ok


def test_criterion_6_weighted_control():
    spec = ProblemSpec(alpha=2.0, T=0.5, omega=(0.0, 0.3))
    params = CarlemanParams(2.0, 1.0)
    runs = {}
    for n in (64, 128):
        runs[n] = solve_weighted_control(spec, ONE_MINUS_X, None, params, make_graded_mesh(n),
                                         make_time_grid(0.5, n))
    res = runs[128]
    rel_final = res.final_norm / res.initial_norm
    c64, c128 = (additional_estimates(runs[n])["C_emp"] for n in (64, 128))
    fam = AFamily(0.5, params)
    mesh, tg = make_graded_mesh(128), make_time_grid(0.5, 128)
    X, Tm = np.meshgrid(mesh.nodes, tg.midpoints, indexing="ij")
    lc = math.log(fam.ordering_constant())
    lr = [fam.log_rho(i, X, Tm) for i in range(4)]
    chain = all(np.all(lr[i + 1] <= lc + lr[i] + 1e-9 * np.abs(lr[i])) for i in range(3))
    stable = 0.5 <= c128 / c64 <= 2.0
    ok_final = rel_final <= 1e-3
    ok = ok_final and stable and chain and res.converged
    record(6, ok, f"final_norm/|u0| = {rel_final:.3e} (<= 1e-3: {ok_final}), estimate constant {c64:.3g} -> {c128:.3g} "
                  f"(stable: {stable}), rho chain: {chain}, CG converged: {res.converged}")
    diag = solve_weighted_control(spec.replace(T=2.0), ONE_MINUS_X, None, params, make_graded_mesh(64),
                                  make_time_grid(2.0, 64))
    record(6, True, f"diagnostic (not gated): T=2, n=m=64 gives final_norm/|u0| = "
                    f"{diag.final_norm / diag.initial_norm:.2e}")
    assert ok


@pytest.fixture(scope="module")
def semilinear_runs():
    spec = ProblemSpec(alpha=2.0, T=1.0, omega=(0.0, 0.3))
    mesh, tg = make_graded_mesh(64), make_time_grid(1.0, 64)
    cfg = HumConfig(eps=1e-5, cg_maxit=2000)
    arct = solve_semilinear_control(catalog.semilinear({"name": "arctan", "c": 0.5}), spec, ONE_MINUS_X,
                                    cfg, mesh, tg)
    zero = solve_semilinear_control(catalog.semilinear({"name": "zero"}), spec, ONE_MINUS_X, cfg, mesh, tg)
    return spec, mesh, tg, cfg, arct, zero


def test_criterion_7_semilinear(semilinear_runs):
    spec, mesh, tg, cfg, (res, trace), (base, base_trace) = semilinear_runs
    d = trace.distances
    monotone = all(a > b for a, b in zip(d, d[1:]))
    k1 = int(round(spec.T / 4 / tg.dt))
    T2 = spec.T - k1 * tg.dt
    plain = solve_hum(spec.replace(T=T2), base.trajectory.values[:, k1], cfg, mesh, make_time_grid(T2, tg.m - k1))
    identical = (np.array_equal(plain.trajectory.values, base.trajectory.values[:, k1:])
                 and np.array_equal(plain.control.values, base.control.values[:, k1:]))
    ok = trace.converged and monotone and res.final_norm <= 10 * base.final_norm and identical
    record(7, ok, f"{trace.iterations} iterations, distances {[f'{v:.2e}' for v in d]}, final {res.final_norm:.3e} "
                  f"vs linear {base.final_norm:.3e}, g=0 bit-identical to HUM: {identical}")
    assert ok


def test_criterion_8_nonlocal(semilinear_runs):
    spec = ProblemSpec(alpha=2.0, T=0.5, omega=(0.0, 0.3))
    params = CarlemanParams(2.0, 1.0)
    mesh, tg = make_graded_mesh(64), make_time_grid(0.5, 64)
    u0 = lambda x: 0.1 * (1 - x)  # noqa: E731
    res, trace = solve_nonlocal_control(catalog.nonlocal_coefficient({"name": "affine", "a": 0.5}), spec, u0,
                                        params, mesh, tg)
    ratios = trace.contraction_ratios()
    contract = all(r <= 0.5 for r in ratios[1:])
    one, _ = solve_nonlocal_control(catalog.nonlocal_coefficient({"name": "one"}), spec, u0, params, mesh, tg)
    lin = solve_weighted_control(spec, u0, Field(np.zeros((65, 65)), mesh, tg), params, mesh, tg)
    identical = (np.array_equal(one.state.values, lin.state.values)
                 and np.array_equal(one.control.values, lin.control.values))
    *_, (sres, strace), _ = semilinear_runs
    K = 0.5
    identities = all(dft <= 1e-6 * (1 + 1.0) for dft in strace.defects) and all(c <= 2 * K for c in strace.coef_norms)
    ok = trace.converged and trace.iterations <= 10 and contract and identical and identities
    record(8, ok, f"{trace.iterations} iterations, ratios {[f'{r:.2e}' for r in ratios]}, l=1 bit-identical: "
                  f"{identical}, semilinear defects max {max(strace.defects):.1e} and |b0|+|b1| max "
                  f"{max(strace.coef_norms):.3f} <= 2K = {2 * K}")
    assert ok


def _random_u0(rng):
    k = np.arange(1, 5)
    coef = rng.standard_normal(4) / k
    return lambda x: np.cos((k[None, :] - 0.5) * np.pi * np.asarray(x)[:, None]) @ coef


def test_criterion_9_supremo():
    spec = ProblemSpec(alpha=2.0, T=0.5, omega=(0.0, 0.3))
    params = CarlemanParams(2.0, 1.0)
    rng = np.random.default_rng(9)
    data = [_random_u0(rng) for _ in range(10)]
    ratios = {}
    for n in (32, 64):
        mesh, tg = make_graded_mesh(n), make_time_grid(0.5, n)
        ratios[n] = [supremo_check(solve_weighted_control(spec, u0, None, params, mesh, tg))["ratio"] for u0 in data]
    r32, r64 = np.array(ratios[32]), np.array(ratios[64])
    bounded = bool(np.all(np.isfinite(r32)) and np.all(np.isfinite(r64)))
    change = r64 / r32
    stable = bool(np.all((change >= 0.5) & (change <= 2.0)))
    ok = bounded and stable
    record(9, ok, f"ratios at n=64 in [{r64.min():.3g}, {r64.max():.3g}], per-run change n=32->64 in "
                  f"[{change.min():.3f}, {change.max():.3f}] (interpretation-flagged)")
    assert ok


def test_criterion_10_window_study(tmp_path):
    cfg = {"kind": "window-study", "problem": {"alpha": 2, "T": 0.5, "omega": [0, 0.3],
                                               "u0": {"name": "one_minus_x"}},
           "grid": {"n": [64, 128, 256], "m": [64]}, "hum": {"eps": [1e-3], "cg_maxit": 2000},
           "windows": [[0, 0.3], [0.5, 0.8]], "seed": 10}
    path = tmp_path / "windows.json"
    path.write_text(json.dumps(cfg))
    reports = []
    for jobs, name in ((1, "a"), (3, "b")):
        status = cli.main(["run", str(path), "--out", str(tmp_path / name), "--jobs", str(jobs)])
        assert status == 0
        reports.append((tmp_path / name / "report.csv").read_bytes())
    import csv
    import io
    rows = list(csv.DictReader(io.StringIO(reports[0].decode())))
    cost = {(r["window_a"], r["n"]): float(r["control_cost"]) for r in rows}
    table = ", ".join(f"n={n}: {cost[('0.5', n)] / cost[('0', n)]:.3g}" for n in ("64", "128", "256"))
    ok = reports[0] == reports[1] and len(rows) == 6
    record(10, ok, f"cost ratio (0.5,0.8)/(0,0.3): {table}; jobs=1 and jobs=3 reports byte-identical: "
                   f"{reports[0] == reports[1]}")
    assert ok
