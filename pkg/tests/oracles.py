"""Independent reference values used by the tests.

Everything here is written against scipy/numpy directly and shares no code
with the package beyond plain floats.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special


def c_h(h: float) -> float:
    return math.sqrt(2 * h / ((1 - 2 * h) * special.beta(1 - 2 * h, h + 0.5)))


def kernel(h: float, t: float, s: float) -> float:
    """``K_H(t, s)`` from its defining formula, quad with the algebraic endpoint weight."""
    inner, _ = integrate.quad(lambda u: u ** (h - 1.5), s, t, weight="alg", wvar=(h - 0.5, 0.0),
                              epsabs=1e-13, epsrel=1e-12, limit=200)
    return c_h(h) * ((t / s) ** (h - 0.5) * (t - s) ** (h - 0.5) - (h - 0.5) * s ** (0.5 - h) * inner)


def covariance(h: float, t: float, s: float) -> float:
    return 0.5 * (t ** (2 * h) + s ** (2 * h) - abs(t - s) ** (2 * h))


def kernel_product_integral(h: float, t: float, r: float) -> float:
    """``int_0^{min(t,r)} K_H(t,u) K_H(r,u) du`` by nested adaptive quadrature."""
    top = min(t, r)
    val, _ = integrate.quad(lambda u: kernel(h, t, u) * kernel(h, r, u), 0.0, top, limit=400,
                            epsabs=1e-10, epsrel=1e-9, points=[top * 0.999])
    return val


def right_integral(f, alpha: float, horizon: float, x: float) -> float:
    """``I^alpha_{T-} f (x)`` with quad's algebraic weight ``(u - x)^(alpha-1)``."""
    if x >= horizon:
        return 0.0
    val, _ = integrate.quad(f, x, horizon, weight="alg", wvar=(alpha - 1.0, 0.0), epsabs=1e-13, epsrel=1e-12)
    return val / special.gamma(alpha)


def left_integral(f, alpha: float, x: float) -> float:
    """``I^alpha_{0+} f (x)`` with weight ``(x - u)^(alpha-1)``."""
    if x <= 0:
        return 0.0
    val, _ = integrate.quad(f, 0.0, x, weight="alg", wvar=(0.0, alpha - 1.0), epsabs=1e-13, epsrel=1e-12)
    return val / special.gamma(alpha)


def gaussian_covariance_matrix(h: float, times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    return 0.5 * (t[:, None] ** (2 * h) + t[None, :] ** (2 * h) - np.abs(t[:, None] - t[None, :]) ** (2 * h))


def cholesky_fbm(h: float, times: np.ndarray, n_paths: int, seed: int) -> np.ndarray:
    """Exact fBm samples at ``times > 0`` by a dense Cholesky factor."""
    L = np.linalg.cholesky(gaussian_covariance_matrix(h, times))
    z = np.random.default_rng(seed).standard_normal((n_paths, len(times)))
    return z @ L.T


def heun_ode(fn, x0: float, horizon: float, n_steps: int) -> np.ndarray:
    """Deterministic Heun trajectory of ``x' = fn(t, x)``."""
    dt = horizon / n_steps
    out = np.empty(n_steps + 1)
    out[0] = x0
    x = x0
    for j in range(n_steps):
        t = j * dt
        k1 = fn(t, x)
        k2 = fn(t + dt, x + dt * k1)
        x = x + 0.5 * dt * (k1 + k2)
        out[j + 1] = x
    return out


def z_score(sample: np.ndarray, target: float) -> float:
    sample = np.asarray(sample, dtype=float)
    se = sample.std(ddof=1) / math.sqrt(len(sample))
    return (sample.mean() - target) / se
