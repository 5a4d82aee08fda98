"""Riemann-Liouville integrals and Marchaud derivatives on uniform grids.

Functions given by node values are treated as their piecewise-linear
interpolants, and every singular weight is integrated exactly against that
interpolant (product integration).  Left-sided operators are obtained from
the right-sided ones through the reflection ``u -> T - u``.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from . import kernels
from .grid import GridFunction


def _check(f: GridFunction, alpha: float):
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"order alpha must lie in (0, 1), got {alpha}")
    if f.kind != "node":
        raise ValueError("fractional operators take node-based grid functions")
    if not np.all(np.isfinite(f.values)):
        raise ValueError("input function has non-finite values")


def _points(f: GridFunction, at: str) -> tuple[np.ndarray, str]:
    if at == "nodes":
        return np.asarray(f.grid.nodes), "node"
    if at == "midpoints":
        return np.asarray(f.grid.midpoints), "cell"
    raise ValueError(f"at must be 'nodes' or 'midpoints', got {at!r}")


def frac_integral_right(f: GridFunction, alpha: float, at: str = "nodes") -> GridFunction:
    r"""Right-sided integral :math:`I^\alpha_{T-}f(x)=\frac1{\Gamma(\alpha)}\int_x^T f(u)(u-x)^{\alpha-1}du`."""
    _check(f, alpha)
    pts, kind = _points(f, at)
    vals = kernels.right_integral_sum(f.values, f.grid.dt, alpha, pts) / special.gamma(alpha)
    return GridFunction(f.grid, vals, kind)


def frac_derivative_right(f: GridFunction, alpha: float, at: str = "nodes") -> GridFunction:
    r"""Right-sided Marchaud derivative

    .. math:: D^\alpha_{T-}f(s)=\frac{1}{\Gamma(1-\alpha)}\Big(\frac{f(s)}{(T-s)^\alpha}
              +\alpha\int_s^T\frac{f(s)-f(u)}{(u-s)^{1+\alpha}}du\Big).

    The value at ``s = T`` is undefined and returned as NaN.
    """
    _check(f, alpha)
    pts, kind = _points(f, at)
    vals = kernels.right_marchaud_sum(f.values, f.grid.dt, alpha, pts) / special.gamma(1 - alpha)
    return GridFunction(f.grid, vals, kind)


def _reflect(f: GridFunction) -> GridFunction:
    return GridFunction(f.grid, f.values[::-1], f.kind)


def frac_integral_left(f: GridFunction, alpha: float, at: str = "nodes") -> GridFunction:
    r"""Left-sided integral :math:`I^\alpha_{0+}f(x)=\frac1{\Gamma(\alpha)}\int_0^x f(u)(x-u)^{\alpha-1}du`."""
    return _reflect(frac_integral_right(_reflect(f), alpha, at))


def frac_derivative_left(f: GridFunction, alpha: float, at: str = "nodes") -> GridFunction:
    """Left-sided Marchaud derivative; NaN at ``s = 0``."""
    return _reflect(frac_derivative_right(_reflect(f), alpha, at))
