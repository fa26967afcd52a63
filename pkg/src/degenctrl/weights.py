"""Carleman weight families.

Two families are provided:

* the sigma family, singular at both t = 0 and t = T::

      theta = 1 / (t (T - t))**4,  eta = -x**2 / 2,
      xi    = theta * exp(lam * (2|eta|_inf + eta)),
      sigma = theta * exp(4 lam |eta|_inf) - xi,

* the A family built on a smooth positive m(t) which is singular only at T::

      tau = 1/m,  zeta = tau * exp(lam * (1 + eta)),
      A   = tau * (exp(2 lam) - exp(lam * (1 + eta))),
      rho_i = exp(s A) * zeta**(-i),  i = 0..3.

Exponents such as s*sigma easily exceed 700 near the singular times, so every
evaluator has a log-space twin and products are formed as sums of logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ETA_SUP = 0.5  # sup over [0,1] of |eta(x)| = x^2/2


@dataclass(frozen=True)
class CarlemanParams:
    s: float
    lam: float
    s_min: float = 1.0
    lam_min: float = 1.0

    def __post_init__(self) -> None:
        if not (self.s > 0 and self.s >= self.s_min):
            raise ValueError(f"s = {self.s} is below the floor s_min = {self.s_min}")
        if not (self.lam >= self.lam_min and self.lam >= 0):
            raise ValueError(f"lambda = {self.lam} is below the floor lam_min = {self.lam_min}")


def eta(x):
    return -0.5 * np.asarray(x, dtype=float) ** 2


def _check_x(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("x must lie in [0, 1]")
    return x


def _check_t(t, T) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > T)):
        raise ValueError(f"t must lie in [0, {T}]")
    return t


class SigmaFamily:
    def __init__(self, T: float, params: CarlemanParams):
        if not T > 0:
            raise ValueError("T must be positive")
        self.T = float(T)
        self.params = params

    def log_theta(self, t):
        t = _check_t(t, self.T)
        with np.errstate(divide="ignore"):
            return -4.0 * np.log(t * (self.T - t))

    def theta(self, t):
        return np.exp(self.log_theta(t))

    def log_xi(self, x, t):
        lam = self.params.lam
        return self.log_theta(t) + lam * (2 * ETA_SUP + eta(_check_x(x)))

    def sigma(self, x, t):
        x = _check_x(x)
        lam = self.params.lam
        # theta * (e^{2 lam} - e^{lam (1 + eta)}) = theta e^{lam(1+eta)} (e^{lam(1-eta)} - 1)
        inner = np.exp(lam * (1 + eta(x))) * np.expm1(lam * (1 - eta(x)))
        th = self.theta(t)
        with np.errstate(invalid="ignore"):
            out = th * inner
        return np.where(inner == 0, 0.0, out)

    def log_weight(self, x, t, k: float = 0.0):
        """log(exp(-2 s sigma) * xi**k); -inf at t in {0, T} by convention."""
        s = self.params.s
        t = np.asarray(t, dtype=float)
        interior = (t > 0) & (t < self.T)
        tt = np.where(interior, t, 0.5 * self.T)
        val = -2 * s * self.sigma(x, tt) + k * self.log_xi(x, tt)
        return np.where(interior, val, -np.inf)

    def evaluate(self, x, t):
        """(theta, xi, sigma, exp(-2 s sigma))."""
        x = _check_x(x)
        t = _check_t(t, self.T)
        with np.errstate(over="ignore"):
            theta = self.theta(t)
            xi = np.exp(self.log_xi(x, t))
            sigma = self.sigma(x, t)
            damp = np.exp(self.log_weight(x, t))
        return theta, xi, sigma, damp


def eval_sigma_family(params: CarlemanParams, x, t, T: float):
    return SigmaFamily(T, params).evaluate(x, t)


def blend(r):
    """C-infinity step: 0 for r <= 0, 1 for r >= 1."""
    r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        z = 1.0 / r - 1.0 / (1.0 - r)
        out = 1.0 / (1.0 + np.exp(z))
    out = np.where(r <= 0, 0.0, out)
    return np.where(r >= 1, 1.0, out)


def eval_m(t, T: float):
    """Plateau (T/2)^8 on [0, T/4], t^4 (T-t)^4 on [T/2, T], smooth blend between."""
    t = _check_t(t, T)
    plateau = (T / 2) ** 8
    bump = (t * (T - t)) ** 4
    S = blend((t - T / 4) / (T / 4))
    return (1 - S) * plateau + S * bump


class AFamily:
    def __init__(self, T: float, params: CarlemanParams):
        if not T > 0:
            raise ValueError("T must be positive")
        self.T = float(T)
        self.params = params

    def m(self, t):
        return eval_m(t, self.T)

    def log_tau(self, t):
        with np.errstate(divide="ignore"):
            return -np.log(self.m(t))

    def log_zeta(self, x, t):
        return self.log_tau(t) + self.params.lam * (1 + eta(_check_x(x)))

    def A(self, x, t):
        x = _check_x(x)
        lam = self.params.lam
        inner = np.exp(lam * (1 + eta(x))) * np.expm1(lam * (1 - eta(x)))
        with np.errstate(over="ignore"):
            return np.exp(self.log_tau(t)) * inner

    def log_rho(self, i: float, x, t):
        """log rho_i = s A - i log zeta; +inf at t = T."""
        with np.errstate(invalid="ignore"):
            val = self.params.s * self.A(x, t) - i * self.log_zeta(x, t)
        t = np.asarray(t, dtype=float)
        return np.where(t >= self.T, np.inf, val)

    def evaluate(self, x, t):
        """(tau, zeta, A, rho_0, rho_1, rho_2, rho_3); rho_i = inf at t = T."""
        x = _check_x(x)
        t = _check_t(t, self.T)
        with np.errstate(over="ignore", invalid="ignore"):
            tau = np.exp(self.log_tau(t))
            zeta = np.exp(self.log_zeta(x, t))
            A = self.A(x, t)
            esa = np.exp(self.params.s * A)
            inv = 1.0 / zeta
            rhos = tuple(np.where(np.asarray(t) >= self.T, np.inf, esa * inv ** i) for i in range(4))
        return (tau, zeta, A) + rhos

    def ordering_constant(self) -> float:
        """c with rho_{i+1} <= c rho_i, i.e. (max m) e^{-lam/2}."""
        return (self.T / 2) ** 8 * np.exp(-self.params.lam / 2)


def eval_a_family(params: CarlemanParams, x, t, T: float):
    return AFamily(T, params).evaluate(x, t)
