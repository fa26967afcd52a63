"""Named coefficients, nonlinearities and initial data selectable from configs.

Every entry is described by a dict such as ``{"name": "arctan", "c": 0.5}``;
a bare number is shorthand for a constant coefficient.
"""

from __future__ import annotations

import math

import numpy as np

from .nonlinear import NonlocalSpec, SemilinearSpec


def _params(desc, defaults: dict) -> dict:
    extra = set(desc) - set(defaults) - {"name"}
    if extra:
        raise ValueError(f"unknown parameters {sorted(extra)} for {desc.get('name')!r}")
    out = dict(defaults)
    out.update({k: float(v) for k, v in desc.items() if k != "name"})
    return out


def _name(desc) -> str:
    if not isinstance(desc, dict) or "name" not in desc:
        raise ValueError(f"catalog entry must be a dict with a 'name', got {desc!r}")
    return desc["name"]


# ---------------------------------------------------------- coefficients

def coefficient(desc):
    """b0 / b1: a float, or a callable (x, t) -> array."""
    if desc is None:
        return 0.0
    if isinstance(desc, (int, float)):
        return float(desc)
    name = _name(desc)
    if name == "constant":
        return _params(desc, {"value": 0.0})["value"]
    if name == "sin":
        p = _params(desc, {"a": 1.0, "k": 1.0})
        return lambda x, t: p["a"] * np.sin(math.pi * p["k"] * x) * np.cos(math.pi * t)
    if name == "affine_t":
        p = _params(desc, {"a": 0.0, "b": 1.0})
        return lambda x, t: p["a"] + p["b"] * t + 0.0 * x
    raise ValueError(f"unknown coefficient {name!r}")


# ------------------------------------------------------- initial data

def initial_datum(desc):
    if desc is None:
        return None
    name = _name(desc)
    if name == "zero":
        return lambda x: 0.0 * x
    if name == "one_minus_x":
        p = _params(desc, {"scale": 1.0})
        return lambda x: p["scale"] * (1.0 - x)
    if name == "cos_mode":
        p = _params(desc, {"scale": 1.0, "k": 1.0})
        return lambda x: p["scale"] * np.cos((p["k"] - 0.5) * math.pi * x)
    if name == "bump":
        p = _params(desc, {"scale": 1.0, "center": 0.6, "width": 0.1})
        return lambda x: p["scale"] * np.exp(-((x - p["center"]) / p["width"]) ** 2) * (1.0 - x)
    raise ValueError(f"unknown initial datum {name!r}")


# ------------------------------------------------------ nonlinearities

def semilinear(desc, alpha: float = 2.0) -> SemilinearSpec:
    name = _name(desc)
    if name == "zero":
        z = lambda x, t, r, q: 0.0 * (x + r + q)  # noqa: E731
        return SemilinearSpec(z, z, z, 0.0, name)
    if name == "linear":
        a = _params(desc, {"a": 1.0})["a"]
        return SemilinearSpec(lambda x, t, r, q: a * r + 0.0 * (x + q),
                              lambda x, t, r, q: a + 0.0 * (x + r + q),
                              lambda x, t, r, q: 0.0 * (x + r + q), abs(a), name)
    if name == "arctan":
        c = _params(desc, {"c": 0.5})["c"]
        return SemilinearSpec(lambda x, t, r, q: c * np.arctan(r) + 0.0 * (x + q),
                              lambda x, t, r, q: c / (1.0 + r * r) + 0.0 * (x + q),
                              lambda x, t, r, q: 0.0 * (x + r + q), abs(c), name)
    if name == "arctan_gradient":
        # c1 arctan(r) + c2 x^{alpha/2} sin(q): |g_r| + x^{-alpha/2}|g_q| <= |c1| + |c2|
        p = _params(desc, {"c1": 0.5, "c2": 0.2})
        c1, c2, h = p["c1"], p["c2"], alpha / 2
        return SemilinearSpec(lambda x, t, r, q: c1 * np.arctan(r) + c2 * x ** h * np.sin(q),
                              lambda x, t, r, q: c1 / (1.0 + r * r) + 0.0 * (x + q),
                              lambda x, t, r, q: c2 * x ** h * np.cos(q) + 0.0 * r,
                              abs(c1) + abs(c2), name)
    raise ValueError(f"unknown nonlinearity {name!r}")


def nonlocal_coefficient(desc) -> NonlocalSpec:
    name = _name(desc)
    if name == "one":
        return NonlocalSpec(lambda r: 1.0, lambda r: 0.0, 0.0, name)
    if name == "affine":
        a = _params(desc, {"a": 0.5})["a"]
        return NonlocalSpec(lambda r: 1.0 + a * r, lambda r: a, abs(a), name)
    if name == "sin":
        a = _params(desc, {"a": 0.5})["a"]
        return NonlocalSpec(lambda r: 1.0 + a * math.sin(r), lambda r: a * math.cos(r), abs(a), name)
    raise ValueError(f"unknown nonlocal coefficient {name!r}")
