import math

import numpy as np
import pytest

from degenctrl import catalog
from degenctrl.errors import InvariantViolation, QuadratureFailure, SolverError
from degenctrl.evolution import ProblemSpec
from degenctrl.grid import Field, make_graded_mesh, make_time_grid
from degenctrl.hum import HumConfig, solve_hum
from degenctrl.nonlinear import (
    NonlocalSpec, SemilinearSpec, linearize_g, nonlocal_source, solve_nonlocal_control,
    solve_semilinear_control,
)
from degenctrl.weighted import solve_weighted_control
from degenctrl.weights import CarlemanParams

SPEC = ProblemSpec(alpha=2.0, T=1.0, omega=(0.0, 0.3))


@pytest.fixture(scope="module")
def grids():
    return make_graded_mesh(24), make_time_grid(1.0, 24)


def _smooth_traj(rng, mesh, tg, scale=1.0, modes=5):
    """Random trajectory from a few smooth space and time modes."""
    k = np.arange(1, modes + 1)
    space = np.cos((k[:, None] - 0.5) * np.pi * mesh.nodes[None, :])
    time = np.cos(np.outer(rng.uniform(0, 3, modes), tg.times))
    coef = rng.standard_normal(modes) / k
    return Field(scale * (space.T * coef) @ time, mesh, tg)


def _traj(rng, mesh, tg, scale=1.0):
    vals = scale * rng.standard_normal((mesh.n + 1, tg.m + 1))
    vals[-1] = 0.0
    return Field(vals, mesh, tg)


# --------------------------------------------------------------- specs

def test_g_must_vanish_at_origin():
    one = lambda x, t, r, q: 1.0 + 0.0 * (x + r + q)  # noqa: E731
    zero = lambda x, t, r, q: 0.0 * (x + r + q)  # noqa: E731
    with pytest.raises(ValueError, match="vanish"):
        SemilinearSpec(one, zero, zero, 1.0)


def test_wrong_partial_rejected():
    g = lambda x, t, r, q: np.sin(r) + 0.0 * (x + q)  # noqa: E731
    wrong = lambda x, t, r, q: 2 * np.cos(r) + 0.0 * (x + q)  # noqa: E731
    zero = lambda x, t, r, q: 0.0 * (x + r + q)  # noqa: E731
    with pytest.raises(ValueError, match="finite differences"):
        SemilinearSpec(g, wrong, zero, 2.0)


def test_negative_budget_rejected():
    z = lambda x, t, r, q: 0.0 * (x + r + q)  # noqa: E731
    with pytest.raises(ValueError):
        SemilinearSpec(z, z, z, -1.0)


def test_nonlocal_normalization():
    with pytest.raises(ValueError):
        NonlocalSpec(lambda r: 2.0 + r, lambda r: 1.0, 1.0)
    NonlocalSpec(lambda r: 1.0 + 1e-13, lambda r: 0.0, 0.0)


# -------------------------------------------------------- linearization

def test_linearize_zero_trajectory(grids):
    mesh, tg = grids
    sspec = catalog.semilinear({"name": "arctan_gradient", "c1": 0.4, "c2": 0.3})
    b0, b1, _, defect = linearize_g(sspec, Field.zeros(mesh, tg), 2.0)
    np.testing.assert_allclose(b0.values, 0.4)
    np.testing.assert_allclose(b1.values[1:], 0.3)
    assert defect == 0.0


def test_linearize_arctan_exact(grids, rng):
    mesh, tg = grids
    c = 0.5
    w = _traj(rng, mesh, tg, 0.8)
    b0, b1, _, _ = linearize_g(catalog.semilinear({"name": "arctan", "c": c}), w, 2.0)
    W = w.values
    with np.errstate(invalid="ignore", divide="ignore"):
        expected = np.where(W != 0, c * np.arctan(W) / W, c)
    # 8-point Gauss-Legendre on 1/(1 + mu^2 w^2) with |w| up to about 3
    np.testing.assert_allclose(b0.values, expected, rtol=1e-6)
    assert not b1.values.any()


def test_linearize_linear_exact(grids, rng):
    mesh, tg = grids
    b0, b1, _, defect = linearize_g(catalog.semilinear({"name": "linear", "a": 0.7}), _traj(rng, mesh, tg), 2.0)
    np.testing.assert_allclose(b0.values, 0.7, rtol=1e-15)
    assert defect <= 1e-15


@pytest.mark.parametrize("draw", range(20))
def test_reconstruction_and_bound_on_random_trajectories(draw, grids):
    mesh, tg = grids
    rng = np.random.default_rng(draw)
    sspec = catalog.semilinear({"name": "arctan_gradient", "c1": 0.5, "c2": 0.2}, alpha=2.0)
    # gradients of order one, like the controlled states; steep gradients make
    # sin(mu q) oscillate beyond what 8 Gauss points resolve
    w = _smooth_traj(rng, mesh, tg, 0.3, modes=3)
    _, _, bound, defect = linearize_g(sspec, w, 2.0)
    assert defect <= 1e-6 * (1 + np.max(np.abs(w.values)))
    assert bound <= 2 * sspec.K


def test_oscillatory_g_breaks_quadrature(grids):
    mesh, tg = grids
    k = 60.0
    sspec = SemilinearSpec(lambda x, t, r, q: np.sin(k * r) / k + 0.0 * (x + q),
                           lambda x, t, r, q: np.cos(k * r) + 0.0 * (x + q),
                           lambda x, t, r, q: 0.0 * (x + r + q), 1.0)
    w = Field(np.full((mesh.n + 1, tg.m + 1), 2.0), mesh, tg)
    with pytest.raises(QuadratureFailure):
        linearize_g(sspec, w, 2.0)


def test_understated_budget_is_an_invariant_violation(grids, rng):
    mesh, tg = grids
    g = catalog.semilinear({"name": "linear", "a": 1.0})
    small = SemilinearSpec(g.g, g.g_r, g.g_q, 0.4)
    with pytest.raises(InvariantViolation):
        linearize_g(small, _traj(rng, mesh, tg), 2.0)


def test_linearize_requires_levels(grids):
    mesh, tg = grids
    with pytest.raises(ValueError):
        linearize_g(catalog.semilinear({"name": "zero"}), Field.zeros(mesh, tg, levels=False), 2.0)


# ------------------------------------------------------------ semilinear

def test_zero_nonlinearity_matches_plain_hum(grids):
    mesh, tg = grids
    cfg = HumConfig(eps=1e-4)
    res, trace = solve_semilinear_control(catalog.semilinear({"name": "zero"}), SPEC, lambda x: 1 - x,
                                          cfg, mesh, tg)
    assert trace.iterations == 1 and trace.converged
    k1 = 6
    u_split = res.trajectory.values[:, k1]
    ref = solve_hum(SPEC.replace(T=1.0 - k1 * tg.dt), u_split, cfg, mesh, make_time_grid(1.0 - k1 * tg.dt, 18))
    assert np.array_equal(res.trajectory.values[:, k1:], ref.trajectory.values)
    assert np.array_equal(res.control.values[:, k1:], ref.control.values)
    assert not res.control.values[:, :k1].any()


def test_zero_initial_datum_stays_zero(grids):
    mesh, tg = grids
    res, trace = solve_semilinear_control(catalog.semilinear({"name": "arctan"}), SPEC, None,
                                          HumConfig(eps=1e-4), mesh, tg)
    assert not res.trajectory.values.any() and not res.control.values.any()
    assert trace.converged


def test_arctan_scenario_contracts(grids):
    mesh, tg = grids
    cfg = HumConfig(eps=1e-5)
    res, trace = solve_semilinear_control(catalog.semilinear({"name": "arctan", "c": 0.5}), SPEC,
                                          lambda x: 1 - x, cfg, mesh, tg)
    base, _ = solve_semilinear_control(catalog.semilinear({"name": "zero"}), SPEC, lambda x: 1 - x, cfg, mesh, tg)
    assert trace.converged and trace.distances[-1] <= 1e-6
    assert all(a > b for a, b in zip(trace.distances, trace.distances[1:]))
    assert res.final_norm <= 10 * base.final_norm
    assert all(c <= 2 * 0.5 for c in trace.coef_norms)
    assert len(trace.rows()) == len(trace.distances)


def test_glued_trajectory_continuous(grids):
    mesh, tg = grids
    res, _ = solve_semilinear_control(catalog.semilinear({"name": "arctan"}), SPEC, lambda x: 1 - x,
                                      HumConfig(eps=1e-3), mesh, tg)
    assert res.trajectory.values.shape == (mesh.n + 1, tg.m + 1)
    assert res.control.values.shape == (mesh.n + 1, tg.m)


def test_iteration_cap_raises(grids):
    mesh, tg = grids
    with pytest.raises(SolverError) as exc:
        solve_semilinear_control(catalog.semilinear({"name": "arctan"}), SPEC, lambda x: 1 - x,
                                 HumConfig(eps=1e-3), mesh, tg, tol=1e-30, maxit=2)
    assert exc.value.diagnostics["trace"].iterations == 2


def test_bad_split(grids):
    mesh, tg = grids
    with pytest.raises(ValueError):
        solve_semilinear_control(catalog.semilinear({"name": "zero"}), SPEC, None, HumConfig(), mesh, tg, T0=1.0)


# -------------------------------------------------------------- nonlocal

NL_SPEC = ProblemSpec(alpha=2.0, T=0.5, omega=(0.0, 0.3))
P = CarlemanParams(2.0, 1.0)


@pytest.fixture(scope="module")
def nl_grids():
    return make_graded_mesh(24), make_time_grid(0.5, 24)


def test_inactive_nonlocal_term_is_the_linear_solve(nl_grids):
    mesh, tg = nl_grids
    res, trace = solve_nonlocal_control(catalog.nonlocal_coefficient({"name": "one"}), NL_SPEC,
                                        lambda x: 0.1 * (1 - x), P, mesh, tg)
    ref = solve_weighted_control(NL_SPEC, lambda x: 0.1 * (1 - x),
                                 Field(np.zeros((mesh.n + 1, tg.m + 1)), mesh, tg), P, mesh, tg)
    assert trace.iterations == 1
    assert np.array_equal(res.state.values, ref.state.values)
    assert np.array_equal(res.control.values, ref.control.values)


def test_nonlocal_zero_datum(nl_grids):
    mesh, tg = nl_grids
    res, trace = solve_nonlocal_control(catalog.nonlocal_coefficient({"name": "affine"}), NL_SPEC, None, P, mesh, tg)
    assert not res.state.values.any() and not res.control.values.any() and trace.converged


def test_nonlocal_affine_converges(nl_grids):
    mesh, tg = nl_grids
    res, trace = solve_nonlocal_control(catalog.nonlocal_coefficient({"name": "affine", "a": 0.5}), NL_SPEC,
                                        lambda x: 0.1 * (1 - x), P, mesh, tg)
    assert trace.converged and trace.iterations <= 10
    assert all(r <= 0.5 for r in trace.contraction_ratios()[1:])
    # the nonlinear residual is small next to the state in the same norm
    assert trace.defects[-1] < res.log_norms["u_rho1"] - math.log(1e6)


def test_nonlocal_source_vanishes_for_unit_coefficient(nl_grids, rng):
    mesh, tg = nl_grids
    u = _traj(rng, mesh, tg)
    assert not nonlocal_source(catalog.nonlocal_coefficient({"name": "one"}), u, 2.0).values.any()
