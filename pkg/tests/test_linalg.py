import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import solve_banded

from degenctrl.errors import SolverError
from degenctrl.linalg import ThomasFactor, conjugate_gradient, thomas_solve, tridiag_dense, tridiag_matvec


def _diag_dominant(rng, n):
    lower = rng.uniform(-1, 1, n)
    upper = rng.uniform(-1, 1, n)
    lower[0] = upper[-1] = 0.0
    diag = np.abs(lower) + np.abs(upper) + rng.uniform(0.5, 2.0, n)
    return lower, diag, upper


@given(st.integers(1, 60), st.integers(0, 10_000))
def test_thomas_matches_banded_solver(n, seed):
    rng = np.random.default_rng(seed)
    lower, diag, upper = _diag_dominant(rng, n)
    rhs = rng.standard_normal(n)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    np.testing.assert_allclose(thomas_solve(lower, diag, upper, rhs), solve_banded((1, 1), ab, rhs),
                               rtol=1e-10, atol=1e-12)


def test_factor_reuse_and_matvec(rng):
    lower, diag, upper = _diag_dominant(rng, 25)
    fac = ThomasFactor(lower, diag, upper)
    for _ in range(3):
        b = rng.standard_normal(25)
        x = fac.solve(b)
        np.testing.assert_allclose(tridiag_matvec(lower, diag, upper, x), b, atol=1e-12)
        np.testing.assert_allclose(tridiag_dense(lower, diag, upper) @ x, b, atol=1e-12)


def test_singular_system_reports_diagnostics():
    with pytest.raises(SolverError) as exc:
        ThomasFactor([0.0, 1.0], [1.0, 1.0], [1.0, 0.0])
    assert exc.value.diagnostics["row"] == 1


def test_band_length_mismatch():
    with pytest.raises(ValueError):
        ThomasFactor([0.0], [1.0, 1.0], [0.0, 0.0])


@given(st.integers(1, 30), st.integers(0, 10_000))
def test_cg_solves_spd_system_monotonically(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B @ B.T + n * np.eye(n)
    b = rng.standard_normal(n)
    res = conjugate_gradient(lambda v: A @ v, b, tol=1e-12, maxiter=10 * n)
    assert res.converged
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-10)
    assert np.all(np.diff(res.objective) <= 1e-10 * (1 + abs(res.objective[0])))


def test_cg_zero_rhs_and_custom_inner():
    w = np.array([1.0, 2.0, 3.0])
    inner = lambda a, b: float(np.dot(w * a, b))  # noqa: E731
    res = conjugate_gradient(lambda v: 2 * v, np.zeros(3), inner)
    assert res.iterations == 0 and res.converged and not res.x.any()
    res = conjugate_gradient(lambda v: 2 * v, np.ones(3), inner)
    np.testing.assert_allclose(res.x, 0.5)


def test_cg_warm_start_at_solution_stops_immediately():
    A = np.diag([1.0, 4.0])
    b = np.array([1.0, 2.0])
    res = conjugate_gradient(lambda v: A @ v, b, x0=np.array([1.0, 0.5]))
    assert res.iterations == 0 and res.converged
