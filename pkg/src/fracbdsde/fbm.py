"""Volterra kernel of fractional Brownian motion and the transfer operators.

For ``H < 1/2`` the fBm is ``B_t = int_0^t K_H(t, s) dW0_s``.  The operator
``K`` maps step functions into L² isometrically (with respect to the fBm
covariance), ``K*`` is its L² adjoint.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .calculus import frac_derivative_left, frac_derivative_right
from .grid import GridFunction, Hurst, TimeGrid


class QuadratureError(RuntimeError):
    """A quadrature produced non-finite values or failed to converge."""


# ---------------------------------------------------------------------------
# Kernel and covariance
# ---------------------------------------------------------------------------

def kernel_K_H(h: Hurst, t: float, s: float) -> float:
    """``K_H(t, s)`` for ``0 < s < t`` with the inner integral by adaptive quadrature.

    The substitution ``u = s + v**(1/(H+1/2))`` removes the ``(u-s)**(H-1/2)``
    singularity: the integrand becomes ``(s + v**(1/(H+1/2)))**(H-3/2)/(H+1/2)``.
    """
    if not (0.0 < s < t):
        raise ValueError(f"kernel needs 0 < s < t, got s={s}, t={t}")
    H = h.h
    e = H + 0.5
    # rescale v = s^{H+1/2} w so the integrand's knee sits at w = 1 for every s
    scaled_upper = ((t - s) / s) ** e

    def g(w):
        return (1.0 + w ** (1.0 / e)) ** (H - 1.5) / e

    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)
    body, _ = integrate.quad(g, 0.0, min(1.0, scaled_upper), **opts)
    if scaled_upper > 1.0:
        # power-law tail: integrate in log w
        tail, _ = integrate.quad(lambda y: g(np.exp(y)) * np.exp(y), 0.0, np.log(scaled_upper), **opts)
        body += tail
    inner = s ** (e + H - 1.5) * body
    return h.c_h * ((t / s) ** (H - 0.5) * (t - s) ** (H - 0.5) - (H - 0.5) * s ** (0.5 - H) * inner)


def kernel_values(h: Hurst, t: float, s) -> np.ndarray:
    """Vectorised ``K_H(t, s)``, zero for ``s >= t``.

    Uses the incomplete-beta form of the inner integral,
    ``s**(2H-1) * B(1-2H, H+1/2) * (1 - I_{s/t}(1-2H, H+1/2))``.
    """
    H = h.h
    s = np.asarray(s, dtype=float)
    out = np.zeros(np.broadcast(s, t).shape)
    m = (s > 0) & (s < t)
    sm = np.broadcast_to(s, out.shape)[m]
    tm = np.broadcast_to(np.asarray(t, dtype=float), out.shape)[m]
    a, b = 1 - 2 * H, H + 0.5
    tail = special.beta(a, b) * special.betaincc(a, b, sm / tm)
    out[m] = h.c_h * ((tm / sm) ** (H - 0.5) * (tm - sm) ** (H - 0.5) + (0.5 - H) * sm ** (H - 0.5) * tail)
    return out


def covariance_R(h: Hurst, t, s):
    """fBm covariance ``(t^{2H} + s^{2H} - |t-s|^{2H}) / 2``."""
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    shape = t.shape
    # one power routine for all three terms, so R(t, 0) = 0 and R(t, t) = t^{2H} exactly
    pw = np.power(np.stack([t.ravel(), s.ravel(), np.abs(t - s).ravel()]), 2 * h.h)
    r = (0.5 * (pw[0] + pw[1] - pw[2])).reshape(shape)
    return float(r) if r.ndim == 0 else r


def kernel_inner(h: Hurst, t: float, r: float, adaptive_kernel: bool = False) -> float:
    """``int_0^T K_H(t,s) K_H(r,s) ds`` by singularity-weighted adaptive quadrature.

    Independent of :func:`covariance_R`; used as its oracle.  With
    ``adaptive_kernel`` the kernel itself is evaluated by :func:`kernel_K_H`.
    """
    m = min(t, r)
    if m <= 0:
        return 0.0
    H = h.h
    lead0 = h.c_h * (0.5 - H) * special.beta(1 - 2 * H, H + 0.5)
    if adaptive_kernel:
        def k(tt, s):
            return kernel_K_H(h, tt, s)
    else:
        def k(tt, s):
            return float(kernel_values(h, tt, s))

    def near_zero(tt, s):
        # K(tt, s) / s^{H-1/2}, with its limit at s = 0
        return lead0 if s <= 0.0 else k(tt, s) / s ** (H - 0.5)

    def near_end(tt, s):
        # K(tt, s) / (m - s)^{H-1/2} when tt == m, with its limit at s = m
        if s >= m:
            return h.c_h
        return k(tt, s) / (m - s) ** (H - 0.5)

    half = 0.5 * m
    v1, _ = integrate.quad(lambda s: near_zero(t, s) * near_zero(r, s), 0.0, half,
                           weight="alg", wvar=(2 * H - 1, 0.0), epsabs=0.0, epsrel=1e-12, limit=200)
    if t == r:
        v2, _ = integrate.quad(lambda s: near_end(t, s) ** 2, half, m,
                               weight="alg", wvar=(0.0, 2 * H - 1), epsabs=0.0, epsrel=1e-12, limit=200)
    else:
        far = max(t, r)
        v2, _ = integrate.quad(lambda s: near_end(m, s) * k(far, s), half, m,
                               weight="alg", wvar=(0.0, H - 0.5), epsabs=0.0, epsrel=1e-12, limit=200)
    val = v1 + v2
    if not np.isfinite(val):
        raise QuadratureError(f"kernel inner product failed at t={t}, r={r}")
    return float(val)


# ---------------------------------------------------------------------------
# Cell-averaged kernel weights
# ---------------------------------------------------------------------------

_GJ_NODES = 32
_GL_NODES = 10


def _head_integral(h: Hurst, t: float, b: float) -> float:
    """``int_0^b K_H(t, s) ds`` for ``b`` well below ``t``.

    The leading ``s^{H-1/2}`` term is integrated exactly; the remainder is
    ``s^{1/2-H}`` times an analytic function and goes to Gauss-Jacobi.
    """
    H = h.h
    a_, b_ = 1 - 2 * H, H + 0.5
    B = special.beta(a_, b_)
    lead = h.c_h * (0.5 - H) * B * b ** (H + 0.5) / (H + 0.5)
    x, w = special.roots_jacobi(_GJ_NODES, 0.0, 0.5 - H)
    s = 0.5 * b * (x + 1)
    g = h.c_h * (t ** (H - 0.5) * (t - s) ** (H - 0.5)
                 - (0.5 - H) * B * s ** (2 * H - 1) * special.betainc(a_, b_, s / t))
    return lead + (0.5 * b) ** (1.5 - H) * float(np.dot(w, g))


def _tail_integral(h: Hurst, t: float, a: float) -> float:
    """``int_a^t K_H(t, s) ds``; ``K_H(t,s) / (t-s)^{H-1/2}`` is smooth near ``s = t``."""
    beta = h.h - 0.5
    x, w = special.roots_jacobi(_GJ_NODES, beta, 0.0)
    half = 0.5 * (t - a)
    s = a + half * (x + 1)
    return half ** (beta + 1) * float(np.dot(w, kernel_values(h, t, s) / (t - s) ** beta))


def _cell_integrals(h: Hurst, t: float, dt: float, n_cells: int) -> np.ndarray:
    """``int_{cell i} K_H(t, s) ds`` for the ``n_cells`` cells below ``t``."""
    out = np.zeros(n_cells)
    if n_cells == 1:
        out[0] = _head_integral(h, t, 0.5 * dt) + _tail_integral(h, t, 0.5 * dt)
        return out
    out[0] = _head_integral(h, t, dt)
    out[-1] = _tail_integral(h, t, t - dt)
    if n_cells > 2:
        x, w = special.roots_legendre(_GL_NODES)
        left = np.arange(1, n_cells - 1) * dt
        s = left[:, None] + 0.5 * dt * (x[None, :] + 1)
        out[1:-1] = 0.5 * dt * (kernel_values(h, t, s) @ w)
    return out


@lru_cache(maxsize=32)
def _weight_table(h_value: float, horizon: float, n_steps: int) -> np.ndarray:
    h = Hurst(h_value)
    grid = TimeGrid(horizon, n_steps)
    dt = grid.dt
    table = np.zeros((n_steps + 1, n_steps))
    for j in range(1, n_steps + 1):
        table[j, :j] = _cell_integrals(h, grid.nodes[j], dt, j) / dt
    table.flags.writeable = False
    return table


def kernel_weight_table(grid: TimeGrid, h: Hurst) -> np.ndarray:
    """``w[j, i] = (1/dt) int_{cell i} K_H(t_j, s) ds``; shape ``(n+1, n)``, read-only."""
    return _weight_table(h.h, grid.horizon, grid.n_steps)


# ---------------------------------------------------------------------------
# Transfer operators
# ---------------------------------------------------------------------------

def _require_step(phi: GridFunction):
    if phi.kind != "cell":
        raise ValueError("the exact transfer path takes cell-based step functions")


def step_expansion(phi: GridFunction) -> np.ndarray:
    """Coefficients ``a_j`` with ``phi = sum_j a_j 1_[0, t_j]`` (``a_0`` unused)."""
    _require_step(phi)
    c = np.append(phi.values, 0.0)
    a = np.zeros(phi.grid.n_steps + 1)
    a[1:] = c[:-1] - c[1:]
    return a


def op_K(phi: GridFunction, h: Hurst, method: str = "exact", at: str = "cells") -> GridFunction:
    """Transfer operator ``K`` applied to ``phi``.

    ``method='exact'`` uses ``K 1_[0,t] = K_H(t, .) 1_[0,t]`` and linearity;
    ``at='cells'`` returns cell averages (what path sampling uses) and
    ``at='midpoints'`` point values at cell midpoints.  ``method='quadrature'``
    evaluates the fractional-derivative formula directly at midpoints and
    accepts node-based (piecewise-linear) input as well.
    """
    grid = phi.grid
    if method == "quadrature":
        return _op_K_quadrature(phi, h)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    a = step_expansion(phi)
    if at == "cells":
        return GridFunction(grid, a @ kernel_weight_table(grid, h), "cell")
    if at == "midpoints":
        mids = np.asarray(grid.midpoints)
        vals = np.zeros(grid.n_steps)
        for j in np.nonzero(a)[0]:
            vals += a[j] * kernel_values(h, grid.nodes[j], mids)
        return GridFunction(grid, vals, "cell")
    raise ValueError(f"at must be 'cells' or 'midpoints', got {at!r}")


def _op_K_quadrature(phi: GridFunction, h: Hurst) -> GridFunction:
    grid = phi.grid
    H = h.h
    alpha = h.alpha
    T = grid.horizon
    edges = np.asarray(grid.nodes)
    if phi.kind == "cell":
        def fval(u, cell):
            return u ** (H - 0.5) * phi.values[cell]

        def fprime(u, cell):
            return (H - 0.5) * u ** (H - 1.5) * phi.values[cell]
    else:
        def fval(u, cell):
            lam = (u - edges[cell]) / grid.dt
            return u ** (H - 0.5) * ((1 - lam) * phi.values[cell] + lam * phi.values[cell + 1])

        def fprime(u, cell):
            lam = (u - edges[cell]) / grid.dt
            lin = (1 - lam) * phi.values[cell] + lam * phi.values[cell + 1]
            slope = (phi.values[cell + 1] - phi.values[cell]) / grid.dt
            return (H - 0.5) * u ** (H - 1.5) * lin + u ** (H - 0.5) * slope
    out = np.zeros(grid.n_steps)
    for m, s in enumerate(grid.midpoints):
        fs = fval(s, m)
        # own cell: (f(s) - f(u)) / (u - s) is smooth, weight (u - s)^(-alpha)
        def own(u, m=m, s=s, fs=fs):
            return -fprime(s, m) if u <= s else (fs - fval(u, m)) / (u - s)

        acc, _ = integrate.quad(own, s, edges[m + 1],
                                weight="alg", wvar=(-alpha, 0.0), epsabs=1e-13, epsrel=1e-11)
        for i in range(m + 1, grid.n_steps):
            part, _ = integrate.quad(lambda u: (fs - fval(u, i)) * (u - s) ** (-1 - alpha),
                                     edges[i], edges[i + 1], epsabs=1e-13, epsrel=1e-11)
            acc += part
        marchaud = (fs / (T - s) ** alpha + alpha * acc) / special.gamma(1 - alpha)
        out[m] = h.c_h * special.gamma(H + 0.5) * s ** (0.5 - H) * marchaud
    if not np.all(np.isfinite(out)):
        raise QuadratureError("transfer-operator quadrature produced non-finite values")
    return GridFunction(grid, out, "cell")


def op_K_star(g: GridFunction, h: Hurst, at: str = "midpoints") -> GridFunction:
    """Adjoint ``(K*g)(u) = C_H Gamma(H+1/2) u^{H-1/2} D^{1/2-H}_{0+}(s^{1/2-H} g(s))(u)``.

    ``g`` is node-based; evaluation at midpoints avoids the ``u = 0`` node.
    """
    if g.kind != "node":
        raise ValueError("op_K_star takes a node-based grid function")
    H = h.h
    s = np.asarray(g.grid.nodes)
    weighted = GridFunction(g.grid, s ** (0.5 - H) * g.values, "node")
    d = frac_derivative_left(weighted, h.alpha, at=at)
    u = np.asarray(d.points)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = h.c_h * special.gamma(H + 0.5) * u ** (H - 0.5) * d.values
    check = vals if at == "midpoints" else vals[1:]
    if not np.all(np.isfinite(check)):
        raise QuadratureError("K* quadrature produced non-finite values")
    return GridFunction(g.grid, vals, d.kind)


def op_K_right_check(phi: GridFunction, h: Hurst) -> GridFunction:
    """``K`` through the grid Marchaud derivative (piecewise-linear ``u^{H-1/2} phi``).

    Coarse cross-check only: the interpolant is poor near ``u = 0``.
    """
    H = h.h
    u = np.asarray(phi.grid.nodes)
    with np.errstate(divide="ignore"):
        f = np.where(u > 0, u ** (H - 0.5), 0.0) * phi.values
    d = frac_derivative_right(GridFunction(phi.grid, f, "node"), h.alpha, at="midpoints")
    m = np.asarray(phi.grid.midpoints)
    return GridFunction(phi.grid, h.c_h * special.gamma(H + 0.5) * m ** (0.5 - H) * d.values, "cell")


def kstark_indicator(h: Hurst, a: float, r):
    """``(K* K 1_[0,a])(r) = d/dr R_H(a, r)``.

    Follows from ``<K*K 1_[0,a], 1_[0,r]> = <K 1_[0,a], K 1_[0,r]> = R_H(a, r)``.
    """
    H = h.h
    r = np.asarray(r, dtype=float)
    d = a - r
    return H * (r ** (2 * H - 1) + np.sign(d) * np.abs(d) ** (2 * H - 1))


def _R_primitive(h: Hurst, a: float, r: np.ndarray) -> np.ndarray:
    """``int_0^r R_H(a, u) du``."""
    H2 = 2 * h.h
    q = np.where(r <= a, a ** (H2 + 1) - np.abs(a - r) ** (H2 + 1), a ** (H2 + 1) + np.abs(r - a) ** (H2 + 1))
    return 0.5 * (a ** H2 * r + r ** (H2 + 1) / (H2 + 1) - q / (H2 + 1))


def kstark_pairing_weights(phi: GridFunction, h: Hurst) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``(wl, wr)`` with ``<K*K phi, u> = sum_i wl[i] u(t_i^+) + wr[i] u(t_{i+1}^-)``.

    ``u`` is linear inside each cell (possibly discontinuous across cells);
    ``phi`` is a step function.  Integrals are exact.
    """
    grid = phi.grid
    t = np.asarray(grid.nodes)
    dt = grid.dt
    wl = np.zeros(grid.n_steps)
    wr = np.zeros(grid.n_steps)
    coeffs = step_expansion(phi)
    for j in np.nonzero(coeffs)[0]:
        a = t[j]
        R = covariance_R(h, a, t)
        P = _R_primitive(h, a, t)
        total = np.diff(R)
        right = (dt * R[1:] - np.diff(P)) / dt
        wl += coeffs[j] * (total - right)
        wr += coeffs[j] * right
    return wl, wr


def lambda_inner(phi: GridFunction, psi: GridFunction, h: Hurst) -> float:
    """Bilinear form ``sum a_j b_k R_H(t_j, t_k)`` of two step functions."""
    a, b = step_expansion(phi), step_expansion(psi)
    t = np.asarray(phi.grid.nodes)
    ja, kb = np.nonzero(a)[0], np.nonzero(b)[0]
    if len(ja) == 0 or len(kb) == 0:
        return 0.0
    R = covariance_R(h, t[ja][:, None], t[kb][None, :])
    return float(a[ja] @ R @ b[kb])


def transfer_inner(phi: GridFunction, psi: GridFunction, h: Hurst) -> float:
    """``<K phi, K psi>_{L²}`` by quadrature of kernel products (independent of R_H)."""
    a, b = step_expansion(phi), step_expansion(psi)
    t = np.asarray(phi.grid.nodes)
    seen = {}
    total = 0.0
    for j in np.nonzero(a)[0]:
        for k in np.nonzero(b)[0]:
            key = (min(j, k), max(j, k))
            if key not in seen:
                seen[key] = kernel_inner(h, t[key[0]], t[key[1]])
            total += a[j] * b[k] * seen[key]
    return float(total)


def fbm_cholesky(grid: TimeGrid, h: Hurst, seed: int, n_paths: int) -> np.ndarray:
    """Exact-law fBm node values via Cholesky of R_H (distributional oracle only)."""
    t = np.asarray(grid.nodes[1:])
    cov = covariance_R(h, t[:, None], t[None, :])
    L = np.linalg.cholesky(cov)
    z = np.random.default_rng(seed).standard_normal((n_paths, len(t)))
    out = np.zeros((n_paths, grid.n_steps + 1))
    out[:, 1:] = z @ L.T
    return out
