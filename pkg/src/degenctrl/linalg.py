"""Tridiagonal (Thomas) solves and a conjugate gradient loop.

Tridiagonal systems are stored as three arrays of equal length:

    lower[i] * u[i-1] + diag[i] * u[i] + upper[i] * u[i+1] = rhs[i]

with lower[0] and upper[-1] ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable, Optional

import numpy as np

from .errors import SolverError


class ThomasFactor:
    """Forward-elimination coefficients of a tridiagonal matrix.

    Factoring once and reusing the factor is what makes constant-coefficient
    time stepping cheap: every step is then two O(n) sweeps.
    """

    __slots__ = ("lower", "cprime", "denom", "n")

    def __init__(self, lower, diag, upper):
        lower = [float(v) for v in lower]
        diag = [float(v) for v in diag]
        upper = [float(v) for v in upper]
        n = len(diag)
        if not (len(lower) == len(upper) == n):
            raise ValueError("tridiagonal bands must have equal length")
        cprime = [0.0] * n
        denom = [0.0] * n
        for i in range(n):
            d = diag[i] - (lower[i] * cprime[i - 1] if i else 0.0)
            if d == 0.0 or not math.isfinite(d):
                raise SolverError(
                    "singular tridiagonal system",
                    {"row": i, "pivot": d, "size": n},
                )
            denom[i] = d
            cprime[i] = upper[i] / d if i < n - 1 else 0.0
        self.lower = lower
        self.cprime = cprime
        self.denom = denom
        self.n = n

    def solve(self, rhs) -> np.ndarray:
        lower, cprime, denom = self.lower, self.cprime, self.denom
        n = self.n
        r = [float(v) for v in rhs]
        y = [0.0] * n
        prev = 0.0
        for i in range(n):
            prev = (r[i] - lower[i] * prev) / denom[i]
            y[i] = prev
        for i in range(n - 2, -1, -1):
            y[i] -= cprime[i] * y[i + 1]
        return np.array(y)


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    return ThomasFactor(lower, diag, upper).solve(rhs)


def tridiag_matvec(lower, diag, upper, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.asarray(diag) * u
    out[1:] += np.asarray(lower)[1:] * u[:-1]
    out[:-1] += np.asarray(upper)[:-1] * u[1:]
    return out


def tridiag_dense(lower, diag, upper) -> np.ndarray:
    n = len(diag)
    M = np.diag(np.asarray(diag, dtype=float))
    if n > 1:
        M += np.diag(np.asarray(upper, dtype=float)[:-1], 1)
        M += np.diag(np.asarray(lower, dtype=float)[1:], -1)
    return M


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norms: list = field(default_factory=list)
    objective: list = field(default_factory=list)


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    inner: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
    tol: float = 1e-8,
    maxiter: int = 500,
    x0: Optional[np.ndarray] = None,
) -> CGResult:
    """Solve A x = rhs for A symmetric positive definite in ``inner``.

    Stops when ||r|| <= tol * ||rhs||.  ``objective`` records the quadratic
    0.5 <Ax, x> - <rhs, x> at every iterate, which CG decreases monotonically.
    """
    if inner is None:
        inner = lambda a, b: float(np.dot(a, b))  # noqa: E731
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    bnorm = math.sqrt(max(inner(b, b), 0.0))
    rr = inner(r, r)
    history = [math.sqrt(max(rr, 0.0))]
    # with x0 = 0 the quadratic is 0; otherwise 0.5<Ax,x> - <b,x> = -0.5<r + b, x>
    objective = [-0.5 * inner(r + b, x)]
    if bnorm == 0.0:
        return CGResult(x, 0, True, history, objective)
    threshold = tol * bnorm
    p = r.copy()
    it = 0
    while history[-1] > threshold and it < maxiter:
        Ap = matvec(p)
        pAp = inner(p, Ap)
        if pAp <= 0.0:
            break
        step = rr / pAp
        x = x + step * p
        r = r - step * Ap
        rr_new = inner(r, r)
        it += 1
        history.append(math.sqrt(max(rr_new, 0.0)))
        objective.append(-0.5 * inner(r + b, x))
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(x, it, history[-1] <= threshold, history, objective)
