"""Deterministic shifts of the fBm noise and the associated exponentials.

For a step coefficient ``gamma`` the shift ``T_t`` adds the drift
``int_0^. (K gamma 1_[0,t])(r) dr`` to W0 and ``A_t`` removes it.  Everything
downstream sees ``B`` only through these tables, so all compositions are
closed-form offsets computed once per grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .fbm import kernel_weight_table
from .grid import GridFunction, Hurst, TimeGrid
from .paths import PathEnsemble


class DivergenceError(ValueError):
    """A quadrature in the exponential-moment functional diverges."""


@dataclass(frozen=True, eq=False)
class GammaSpec:
    """Step coefficient of the fractional noise.

    ``p`` is the integrability exponent used by :func:`exp_moment_bound`;
    ``None`` picks a default inside the admissible range for the Hurst index.
    """

    grid: TimeGrid
    values: np.ndarray
    p: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 0:
            v = np.full(self.grid.n_steps, float(v))
        if v.shape != (self.grid.n_steps,):
            raise ValueError(f"gamma needs one value per cell ({self.grid.n_steps}), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("gamma must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, c: float, p: float | None = None) -> "GammaSpec":
        return cls(grid, np.full(grid.n_steps, float(c)), p)

    @classmethod
    def pieces(cls, grid: TimeGrid, breaks, levels, p: float | None = None) -> "GammaSpec":
        """Piecewise constant: ``levels[k]`` on ``[breaks[k], breaks[k+1])``."""
        t = np.asarray(grid.midpoints)
        idx = np.searchsorted(np.asarray(breaks), t, side="right") - 1
        return cls(grid, np.asarray(levels, dtype=float)[np.clip(idx, 0, len(levels) - 1)], p)

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(np.diff(self.values) != 0))

    def as_grid_function(self) -> GridFunction:
        return GridFunction(self.grid, self.values, "cell")

    def scaled(self, c: float) -> "GammaSpec":
        return GammaSpec(self.grid, self.values * c, self.p)

    def exponent(self, h: Hurst) -> float:
        if self.p is not None:
            return float(self.p)
        lo = 1.0 / h.h
        if self.has_jumps and h.h > 0.25:
            return 0.5 * (lo + 1.0 / h.alpha)
        return 2.0 * lo


@dataclass(frozen=True, eq=False)
class GirsanovFrame:
    grid: TimeGrid
    hurst: Hurst
    gamma: GammaSpec
    p: float
    weights: np.ndarray    # (n+1, n) kernel cell averages
    kg: np.ndarray         # (n+1, n) cell averages of K(gamma 1_[0,t_j])
    drift: np.ndarray      # (n+1, n+1) drift_j at node m
    q: np.ndarray          # (n+1,)
    cross: np.ndarray      # (n+1, n+1)
    b_offset: np.ndarray   # (n+1, n+1) [m, j]: B_{t_m}(T_{t_j}) - B_{t_m}

    def node(self, t) -> int:
        if isinstance(t, (int, np.integer)):
            if not 0 <= t <= self.grid.n_steps:
                raise ValueError(f"node index {t} out of range")
            return int(t)
        return self.grid.index_of(float(t))

    def offset(self, kphi: np.ndarray, t) -> float:
        """Deterministic increment of ``B(phi)`` under ``T_t``, from cell averages of ``K phi``."""
        return float(self.grid.dt * np.dot(self.kg[self.node(t)], kphi))

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.gamma.values)


def build_frame(gamma: GammaSpec, h: Hurst, grid: TimeGrid | None = None) -> GirsanovFrame:
    grid = grid or gamma.grid
    if grid != gamma.grid:
        raise ValueError("gamma is not aligned to the grid")
    p = gamma.exponent(h)
    if p <= 1.0 / h.h:
        raise ValueError(f"integrability exponent p={p} must exceed 1/H={1 / h.h:.4g}")
    n, dt = grid.n_steps, grid.dt
    W = kernel_weight_table(grid, h)
    g = gamma.values
    # row j expands gamma 1_[0,t_j] = sum_k a_k 1_[0,t_k]
    M = np.zeros((n + 1, n + 1))
    for j in range(1, n + 1):
        M[j, 1:j] = g[:j - 1] - g[1:j]
        M[j, j] = g[j - 1]
    kg = M @ W
    drift = np.zeros((n + 1, n + 1))
    np.cumsum(kg * dt, axis=1, out=drift[:, 1:])
    cross = dt * kg @ kg.T
    q = np.diag(cross).copy()
    b_offset = dt * W @ kg.T
    for arr in (W, kg, drift, q, cross, b_offset):
        if arr.flags.writeable:
            arr.flags.writeable = False
    return GirsanovFrame(grid, h, gamma, p, W, kg, drift, q, cross, b_offset)


def shift_path(ens: PathEnsemble, frame: GirsanovFrame, t, sign: int) -> PathEnsemble:
    """``T_t`` (``sign=+1``) or ``A_t`` (``sign=-1``) applied to every path."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 (T_t) or -1 (A_t)")
    j = frame.node(t)
    return ens.with_fbm_noise(ens.dW0 + sign * frame.grid.dt * frame.kg[j], shift=(sign, j))


def gamma_integral(ens: PathEnsemble, frame: GirsanovFrame) -> np.ndarray:
    """``int_0^{t_j} gamma dB`` at every node, shape (N, n+1)."""
    return ens.dW0 @ frame.kg.T


def log_epsilon(ens: PathEnsemble, frame: GirsanovFrame, t=None) -> np.ndarray:
    """``log eps_t``; all nodes when ``t`` is None."""
    full = gamma_integral(ens, frame) - 0.5 * frame.q
    return full if t is None else full[:, frame.node(t)]


def epsilon(ens: PathEnsemble, frame: GirsanovFrame, t=None) -> np.ndarray:
    return np.exp(log_epsilon(ens, frame, t))


def log_epsilon_transformed(ens: PathEnsemble, frame: GirsanovFrame) -> np.ndarray:
    """``log eps_s(T_s)`` at every node, via ``log eps_s + q_s``."""
    return log_epsilon(ens, frame) + frame.q


def j_factor(frame: GirsanovFrame, r, v) -> float:
    """``J_r^v = exp(c_{v,r})``, so that ``1/eps_r(T_r A_v) = J_r^v / eps_r(T_r)``."""
    return float(np.exp(frame.cross[frame.node(v), frame.node(r)]))


def running_sup(ens: PathEnsemble, frame: GirsanovFrame, upto=None) -> np.ndarray:
    """``max_{t_j <= upto} |int_0^{t_j} gamma dB|`` per path."""
    ig = gamma_integral(ens, frame)
    j = frame.grid.n_steps if upto is None else frame.node(upto)
    return np.abs(ig[:, :j + 1]).max(axis=1)


@dataclass(frozen=True)
class CheckRow:
    functional: str
    lhs: float
    rhs: float
    se: float

    @property
    def diff(self) -> float:
        return self.lhs - self.rhs

    @property
    def z(self) -> float:
        if self.se == 0.0:
            return 0.0 if self.diff == 0.0 else float("inf")
        return self.diff / self.se

    def passed(self, limit: float = 4.0) -> bool:
        return abs(self.z) <= limit


def standard_error(x: np.ndarray, n_w: int = 1) -> float:
    """Standard error of the mean; nested paths sharing an fBm path are averaged first."""
    if n_w > 1:
        x = x.reshape(-1, n_w).mean(axis=1)
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")


def paired_row(name: str, a: np.ndarray, b: np.ndarray, n_w: int = 1) -> CheckRow:
    """Means of two per-path samples with the standard error of their difference."""
    return CheckRow(name, float(a.mean()), float(b.mean()), standard_error(a - b, n_w))


def girsanov_expectation_check(F, frame: GirsanovFrame, t, ens: PathEnsemble) -> CheckRow:
    """Compare ``E[F]`` with ``E[F(A_t) eps_t]`` on the same paths."""
    j = frame.node(t)
    lhs = F.evaluate(ens)
    rhs = F.evaluate(ens, frame, shift=(-1, j)) * epsilon(ens, frame, j)
    return paired_row(F.name, lhs, rhs, ens.n_w)


@dataclass(frozen=True)
class MomentBound:
    p: float
    c_hp: float
    first_term: float
    second_term: float

    @property
    def g_p(self) -> float:
        return self.first_term + self.second_term

    @property
    def log_bound(self) -> float:
        return float(np.log(2.0) + 0.5 * (self.c_hp * self.g_p + 4 * np.sqrt(2)) ** 2)

    @property
    def bound(self) -> float:
        return float(np.exp(self.log_bound))


def exp_moment_bound(gamma: GammaSpec, h: Hurst, c_hp: float = 1.0, p: float | None = None) -> MomentBound:
    """Upper bound ``2 exp{(C G_p + 4 sqrt 2)^2 / 2}`` on ``E[exp I*_T]``.

    Valid only up to the unspecified constant ``C = c_hp``.  The inner
    integral of ``|gamma(t)-gamma(x)|(t-x)^{H-3/2}`` is exact for step
    ``gamma``; the outer ``dx`` integral is adaptive with the algebraic
    endpoint weight at each jump.
    """
    grid = gamma.grid
    H = h.h
    p = gamma.exponent(h) if p is None else float(p)
    if p <= 1.0 / H:
        raise ValueError(f"p={p} must exceed 1/H={1 / H:.4g}")
    T, dt, n = grid.horizon, grid.dt, grid.n_steps
    g = gamma.values
    first = (np.sum(np.abs(g) ** p) * dt) ** (1 / p) * T ** (H - 1 / p)
    second = 0.0
    if gamma.has_jumps:
        if p * (0.5 - H) >= 1.0:
            raise DivergenceError(
                f"gamma has jumps and p(1/2-H) = {p * (0.5 - H):.3g} >= 1: the outer integral diverges")
        t = np.asarray(grid.nodes)
        a = 0.5 - H
        total = 0.0
        k = 1.0 / a
        for i in range(n):
            jumps = np.abs(g[i + 1:] - g[i])
            if not np.any(jumps):
                continue
            right = t[i + 1]
            far_lo = t[i + 2:-1]
            far_hi = t[i + 3:]

            def far(x, jumps=jumps, far_lo=far_lo, far_hi=far_hi):
                return np.sum(jumps[1:] * ((far_lo - x) ** (H - 0.5) - (far_hi - x) ** (H - 0.5))) / a

            if jumps[0] == 0.0:
                val, _ = integrate.quad(lambda x: far(x) ** p, t[i], right, epsabs=0.0, epsrel=1e-10)
            else:
                lead = jumps[0]

                def smooth(y, lead=lead, right=right, far=far):
                    # with d = right - x = y^k every d^a becomes y
                    d = y ** k
                    return lead * (1.0 - y * (d + dt) ** (-a)) / a + y * far(right - d)

                val, _ = integrate.quad(lambda y: k * smooth(y) ** p, 0.0, dt ** a, weight="alg",
                                        wvar=(k - 1.0 - p, 0.0), epsabs=0.0, epsrel=1e-10, limit=200)
            if not np.isfinite(val):
                raise DivergenceError(f"outer integral diverges on cell {i}")
            total += val
        second = T ** (0.5 - 1 / p) * total ** (1 / p)
    return MomentBound(p, float(c_hp), float(first), float(second))
