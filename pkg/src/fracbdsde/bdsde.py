"""Regression Monte Carlo for the pathwise BSDE and the Girsanov map to the BDSDE.

The pathwise equation runs forward in ``t`` but its information flows from
the future Brownian increments, so with the anchor ``Yhat_0 = xi`` the sweep

    Ytilde      = E[Yhat_j | G_{j+1}]
    Zhat_{j+1}  = E[(Yhat_j - Ytilde) dW_j | G_{j+1}] / dt
    Yhat_{j+1}  = Ytilde + dt F_{t_{j+1}}(X_{j+1}, Ytilde, Zhat_{j+1})

is an ordinary backward Euler scheme in reversed time.  ``G_{j+1}`` is the
fBm path together with the Brownian increments after ``t_{j+1}``; it is
approximated by least squares on polynomials of the Markov state
``X_{j+1}``, fitted separately for every fBm path (group) of the ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, NamedTuple

import numpy as np

from .divergence import backward_ito_integral, cell_endpoints, duality_check
from .girsanov import CheckRow, GirsanovFrame, log_epsilon, log_epsilon_transformed, standard_error
from .paths import PathEnsemble


class RegressionError(np.linalg.LinAlgError):
    """Ill-conditioned least-squares step."""


class SolverBlowUp(ArithmeticError):
    pass


@dataclass(frozen=True)
class BasisConfig:
    degree: int = 2
    cond_limit: float = 1e10
    min_paths_per_column: int = 10

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("basis degree must be non-negative")


def monomial_powers(dim: int, degree: int) -> list[tuple]:
    powers = [(0,) * dim]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(dim), deg):
            p = [0] * dim
            for c in combo:
                p[c] += 1
            powers.append(tuple(p))
    return powers


def _design(state: np.ndarray, powers: list[tuple]) -> tuple[np.ndarray, np.ndarray]:
    """Per-group standardised monomials, shape (G, P, k), and a dead-column mask (G, k)."""
    mean = state.mean(axis=1, keepdims=True)
    std = state.std(axis=1, keepdims=True)
    flat = std < 1e-12 * (1.0 + np.abs(mean))
    s = (state - mean) / np.where(flat, 1.0, std)
    G, P, _ = state.shape
    cols = np.empty((G, P, len(powers)))
    dead = np.zeros((G, len(powers)), dtype=bool)
    for c, pw in enumerate(powers):
        term = np.ones((G, P))
        for axis, k in enumerate(pw):
            if k:
                term = term * s[:, :, axis] ** k
                dead[:, c] |= flat[:, 0, axis]
        cols[:, :, c] = term
    cols[dead[:, None, :].repeat(P, axis=1)] = 0.0
    return cols, dead


class GroupProjector:
    """Least-squares projection onto state polynomials, one fit per fBm path."""

    def __init__(self, state: np.ndarray, n_w: int, basis: BasisConfig):
        G = state.shape[0] // n_w
        powers = monomial_powers(state.shape[1], basis.degree)
        if n_w < basis.min_paths_per_column * len(powers):
            raise RegressionError(f"{n_w} Brownian paths per fBm path are too few for "
                                  f"{len(powers)} basis functions")
        self.design, dead = _design(state.reshape(G, n_w, -1), powers)
        gram = np.einsum("gpk,gpl->gkl", self.design, self.design) / n_w
        idx = np.arange(len(powers))
        gram[:, idx, idx] += dead
        self.cond = np.linalg.cond(gram)
        worst = float(np.max(self.cond))
        if not np.isfinite(worst) or worst > basis.cond_limit:
            raise RegressionError(f"regression Gram matrix condition number {worst:.3g} "
                                  f"exceeds {basis.cond_limit:.3g}")
        self.gram = gram
        self.n_w = n_w

    def __call__(self, target: np.ndarray) -> np.ndarray:
        """Fitted values of ``target`` with shape (N,) or (N, r)."""
        G = self.design.shape[0]
        t = target.reshape(G, self.n_w, -1)
        rhs = np.einsum("gpk,gpr->gkr", self.design, t) / self.n_w
        coef = np.linalg.solve(self.gram, rhs)
        fitted = np.einsum("gpk,gkr->gpr", self.design, coef)
        return fitted.reshape(target.shape)


@dataclass(frozen=True)
class DriverSpec:
    """Driver ``f(t, x, y, z)`` with x (N, d), y (N,), z (N, d).

    ``linear`` carries ``(f1, f2, f3)`` cell arrays for drivers of the form
    ``f1 x + f2 y + f3 z`` (scalar state), which have a closed-form solution.
    ``grad(t, x, y, z)`` returns the partials ``(f_x, f_y, f_z)`` when known.
    """

    name: str
    fn: Callable
    lipschitz: float
    linear: tuple | None = None
    grad: Callable | None = None

    def __call__(self, t, x, y, z):
        return self.fn(t, x, y, z)

    def spot_check(self, dim: int = 1, horizon: float = 1.0, n_samples: int = 2000, seed: int = 0):
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, horizon, n_samples)
        x = rng.normal(0.0, 3.0, (n_samples, dim))
        y1, y2 = rng.normal(0.0, 5.0, (2, n_samples))
        z1, z2 = rng.normal(0.0, 5.0, (2, n_samples, dim))
        lhs = np.abs(self.fn(t, x, y1, z1) - self.fn(t, x, y2, z2))
        rhs = self.lipschitz * (np.abs(y1 - y2) + np.abs(z1 - z2).sum(axis=1))
        if np.any(lhs > rhs * (1 + 1e-12) + 1e-12):
            raise ValueError(f"driver {self.name!r} violates its Lipschitz constant {self.lipschitz}")


def linear_driver(grid, f1=0.0, f2=0.0, f3=0.0, name="linear") -> DriverSpec:
    """``f1_t x + f2_t y + f3_t z`` with step (per cell) or constant coefficients."""
    dt, n = grid.dt, grid.n_steps
    coeffs = tuple(np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy() for c in (f1, f2, f3))

    def cell(t):
        return np.minimum(np.floor(np.asarray(t) / dt - 1e-9).astype(int), n - 1).clip(0)

    def fn(t, x, y, z):
        i = cell(t)
        return coeffs[0][i] * x[:, 0] + coeffs[1][i] * y + coeffs[2][i] * z[:, 0]

    def grad(t, x, y, z):
        i = cell(t)
        ones = np.ones_like(y)
        return coeffs[0][i] * ones[:, None], coeffs[1][i] * ones, coeffs[2][i] * ones[:, None]

    lip = float(np.max(np.abs(coeffs[1])) + np.max(np.abs(coeffs[2])))
    return DriverSpec(name, fn, lip, coeffs, grad)


def _zero(t, x, y, z):
    return np.zeros_like(y)


def _zero_grad(t, x, y, z):
    return np.zeros_like(x), np.zeros_like(y), np.zeros_like(z)


def driver_catalog(grid) -> dict[str, DriverSpec]:
    return {
        "zero": DriverSpec("zero", _zero, 0.0, grad=_zero_grad),
        "linear": linear_driver(grid, 0.5, 0.4, 0.3),
        "decay": linear_driver(grid, 0.0, -0.5, 0.0, "decay"),
        "growth": linear_driver(grid, 0.0, 1.0, 0.0, "growth"),
        "decay_plus": DriverSpec("decay_plus", lambda t, x, y, z: 0.3 - 0.5 * y, 0.5),
        "nonlinear": DriverSpec("nonlinear", lambda t, x, y, z: np.sin(y) + 0.5 * np.abs(z[:, 0]) + np.cos(x[:, 0]),
                                1.0),
    }


@dataclass(frozen=True)
class TerminalSpec:
    """``xi = Phi(X_0)`` for a polynomial ``Phi`` given by power-tuple coefficients."""

    name: str
    coeffs: dict

    def __call__(self, x0: np.ndarray) -> np.ndarray:
        out = np.zeros(x0.shape[0])
        for powers, c in self.coeffs.items():
            term = np.full(x0.shape[0], float(c))
            for axis, p in enumerate(powers):
                if p:
                    term = term * x0[:, axis] ** p
            out += term
        return out

    def gradient(self, x0: np.ndarray) -> np.ndarray:
        """``grad Phi`` at every path, shape (N, d)."""
        out = np.zeros(x0.shape)
        for powers, c in self.coeffs.items():
            for axis, p in enumerate(powers):
                if not p:
                    continue
                term = np.full(x0.shape[0], float(c) * p)
                for other, q in enumerate(powers):
                    k = q - 1 if other == axis else q
                    if k:
                        term = term * x0[:, other] ** k
                out[:, axis] += term
        return out

    def quadratic_1d(self) -> tuple[float, float, float]:
        """``(c0, c1, c2)`` for scalar ``Phi`` of degree at most two."""
        c = [0.0, 0.0, 0.0]
        for powers, v in self.coeffs.items():
            if len(powers) != 1 or powers[0] > 2:
                raise ValueError("closed form needs a scalar Phi of degree <= 2")
            c[powers[0]] += float(v)
        return tuple(c)


def constant_terminal(c: float) -> TerminalSpec:
    return TerminalSpec(f"const_{c:g}", {(0,): c})


TERMINALS = {
    "one": constant_terminal(1.0),
    "identity": TerminalSpec("identity", {(1,): 1.0}),
    "square": TerminalSpec("square", {(2,): 1.0}),
    "affine_square": TerminalSpec("affine_square", {(0,): 1.0, (1,): 0.5, (2,): 0.25}),
}


def transformed_driver(log_e: np.ndarray | None, driver: DriverSpec, grid):
    """``F_s(x, y, z) = f(s, x, y e_s, z e_s) / e_s`` with ``e_s = eps_s(T_s)``.

    ``log_e`` is (N, n+1) or None for the untransformed classical driver.
    Returns ``F(j, x, y, z)`` evaluated at node ``j``.
    """
    t = grid.nodes

    if log_e is None:
        def F(j, x, y, z):
            return driver(t[j], x, y, z)
    else:
        def F(j, x, y, z):
            e = np.exp(log_e[:, j])
            return driver(t[j], x, y * e, z * e[:, None]) / e
    return F


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    Yhat: np.ndarray           # (N, m+1)
    Zhat: np.ndarray           # (N, m, d); cell j holds the value at t_{j+1}
    xi: np.ndarray
    max_cond: float
    Y: np.ndarray | None = None
    Z: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def upto(self) -> int:
        return self.Yhat.shape[1] - 1


class SweepResult(NamedTuple):
    Yhat: np.ndarray
    Zhat: np.ndarray
    max_cond: float
    # xi plus the accumulated dt * F along each path: an unprojected estimator
    # with the same mean as Yhat at the last node
    pathwise: np.ndarray


def _sweep(ens: PathEnsemble, F, xi: np.ndarray, state: np.ndarray, basis: BasisConfig, upto: int) -> SweepResult:
    N, d = ens.n_paths, ens.dim_w
    dt = ens.grid.dt
    Yhat = np.empty((N, upto + 1))
    Zhat = np.empty((N, upto, d))
    Yhat[:, 0] = xi
    pathwise = np.array(xi, dtype=float)
    worst = 0.0
    for j in range(upto):
        proj = GroupProjector(state[:, j + 1], ens.n_w, basis)
        worst = max(worst, float(np.max(proj.cond)))
        y_tilde = proj(Yhat[:, j])
        z = proj((Yhat[:, j] - y_tilde)[:, None] * ens.dW[:, j, :]) / dt
        Zhat[:, j] = z
        step = dt * F(j + 1, state[:, j + 1], y_tilde, z)
        Yhat[:, j + 1] = y_tilde + step
        pathwise += step
        if not np.all(np.isfinite(Yhat[:, j + 1])):
            raise SolverBlowUp(f"non-finite Yhat at node {j + 1}")
    return SweepResult(Yhat, Zhat, worst, pathwise)


def _as_state(state: np.ndarray) -> np.ndarray:
    return state[:, :, None] if state.ndim == 2 else state


def solve_pathwise_bsde(ens: PathEnsemble, frame: GirsanovFrame | None, driver: DriverSpec,
                        terminal: TerminalSpec, state: np.ndarray, basis: BasisConfig | None = None,
                        upto: int | None = None, log_e: np.ndarray | None = None) -> BsdeSolution:
    """Solve on ``[0, t_upto]`` with ``xi = Phi(state at node 0)``.

    ``state`` is the Markov state at every node, shape (N, n+1) or (N, n+1, d);
    ``frame=None`` gives the classical (untransformed) equation.  ``log_e``
    overrides ``log eps_s(T_s)``, which is how compositions with ``A_t`` enter.
    """
    basis = basis or BasisConfig()
    state = _as_state(state)
    upto = ens.grid.n_steps if upto is None else int(upto)
    if log_e is None and frame is not None:
        log_e = log_epsilon_transformed(ens, frame)
    F = transformed_driver(log_e, driver, ens.grid)
    xi = terminal(state[:, 0])
    Yhat, Zhat, worst, _ = _sweep(ens, F, xi, state, basis, upto)
    return BsdeSolution(Yhat, Zhat, xi, worst)


def to_bdsde(sol: BsdeSolution, ens: PathEnsemble, frame: GirsanovFrame, driver: DriverSpec,
             terminal: TerminalSpec, state: np.ndarray, basis: BasisConfig | None = None,
             nodes=None) -> BsdeSolution:
    """``(Y_t, Z_t) = (Yhat_t(A_t) eps_t, Zhat_t(A_t) eps_t)``.

    ``Yhat`` is a per-fBm-path regression fit, so it has no closed-form
    dependence on B to shift; instead the sweep is re-run on ``[0, t]`` with
    ``log e_s`` replaced by its ``A_t``-composition ``log e_s - c_{s,t}``.
    ``Z`` cell ``j`` is filled when node ``j+1`` is requested.
    """
    basis = basis or BasisConfig()
    state = _as_state(state)
    m = sol.upto
    nodes = range(1, m + 1) if nodes is None else [int(k) for k in nodes]
    log_e = log_epsilon_transformed(ens, frame)
    log_eps = log_epsilon(ens, frame)
    Y = np.full_like(sol.Yhat, np.nan)
    Z = np.full_like(sol.Zhat, np.nan)
    Y[:, 0] = sol.Yhat[:, 0]
    for k in nodes:
        if k == 0:
            continue
        shifted = log_e[:, :k + 1] - frame.cross[:k + 1, k]
        Yk, Zk, _, _ = _sweep(ens, transformed_driver(shifted, driver, ens.grid), sol.xi, state, basis, k)
        eps = np.exp(log_eps[:, k])
        Y[:, k] = Yk[:, k] * eps
        Z[:, k - 1] = Zk[:, k - 1] * eps[:, None]
    return BsdeSolution(sol.Yhat, sol.Zhat, sol.xi, sol.max_cond, Y, Z, dict(sol.meta))


def linear_closed_form(ens: PathEnsemble, frame: GirsanovFrame | None, driver: DriverSpec,
                       terminal: TerminalSpec, x: float, b: float, sigma: float, state: np.ndarray,
                       upto: int | None = None, transformed: bool = False) -> np.ndarray:
    """Conditional-expectation formula for the linear example, per path and node.

    Requires scalar state ``X_r = x + b (t - r) + sigma (W_t - W_r)``, constant
    ``b, sigma``, a quadratic ``Phi`` and a linear driver with step
    coefficients.  Under ``Q`` the Brownian motion gains drift ``f3``, so
    ``E_Q[X_r | G_s] = X_s + b (s - r) + sigma (F3(s) - F3(r))`` and ``X_0``
    given ``G_s`` is Gaussian with variance ``sigma^2 s``.  The ``dr``
    integral uses the node values of ``e_r``, trapezoid in each cell.

    Returns ``Yhat`` (default) or, with ``transformed``, ``Y`` where
    ``1/e_r`` becomes ``J_r^s / e_r`` and the result is multiplied by ``eps_s``.
    """
    if driver.linear is None:
        raise ValueError(f"driver {driver.name!r} is not linear")
    grid = ens.grid
    f1, f2, f3 = driver.linear
    c0, c1, c2 = terminal.quadratic_1d()
    upto = grid.n_steps if upto is None else int(upto)
    dt = grid.dt
    t = np.asarray(grid.nodes)[:upto + 1]
    F2 = np.concatenate([[0.0], np.cumsum(f2[:upto] * dt)])
    F3 = np.concatenate([[0.0], np.cumsum(f3[:upto] * dt)])
    Xs = _as_state(state)[:, :upto + 1, 0]
    if frame is None:
        log_e = np.zeros((ens.n_paths, upto + 1))
        log_eps = log_e
    else:
        log_e = log_epsilon_transformed(ens, frame)[:, :upto + 1]
        log_eps = log_epsilon(ens, frame)[:, :upto + 1]
    out = np.empty((ens.n_paths, upto + 1))
    for s in range(upto + 1):
        mu = Xs[:, s] + b * t[s] + sigma * F3[s]
        phi = c0 + c1 * mu + c2 * (mu ** 2 + sigma ** 2 * t[s])
        total = np.exp(F2[s]) * phi
        if s > 0 and np.any(f1[:s]):
            r = t[:s + 1]
            inv_e = np.exp(-log_e[:, :s + 1])
            if transformed:
                inv_e = inv_e * np.exp(frame.cross[:s + 1, s])
            shape = np.exp(F2[s] - F2[:s + 1])
            mean_x = Xs[:, s:s + 1] + b * (t[s] - r) + sigma * (F3[s] - F3[:s + 1])
            g = shape * inv_e * mean_x
            total = total + 0.5 * dt * np.sum(f1[:s] * (g[:, :-1] + g[:, 1:]), axis=1)
        out[:, s] = total * np.exp(log_eps[:, s]) if transformed else total
    return out


def bdsde_residual(sol: BsdeSolution, ens: PathEnsemble, driver: DriverSpec, state: np.ndarray,
                   upto: int | None = None) -> np.ndarray:
    """``Y_t - xi - int_0^t f ds + int_0^t Z dW`` (backward Ito), the candidate ``int gamma Y dB``."""
    if sol.Y is None:
        raise ValueError("the solution has not been mapped to the doubly stochastic equation")
    state = _as_state(state)
    k = sol.upto if upto is None else int(upto)
    Y, Z = sol.Y[:, :k + 1], sol.Z[:, :k]
    if np.isnan(Y).any() or np.isnan(Z).any():
        raise ValueError("Y and Z are needed at every node up to t")
    t = ens.grid.nodes
    dt = ens.grid.dt
    drift = sum(dt * driver(t[j + 1], state[:, j + 1], Y[:, j + 1], Z[:, j]) for j in range(k))
    sub = PathEnsemble(ens.grid, ens.hurst, ens.seed, ens.dW0, ens.B, ens.dW[:, :k], ens.n_w)
    return Y[:, k] - sol.xi - drift + backward_ito_integral(Z, sub)


def bdsde_duality_check(sol: BsdeSolution, ens: PathEnsemble, frame: GirsanovFrame, driver: DriverSpec,
                        state: np.ndarray, family, upto: int | None = None) -> list[CheckRow]:
    k = sol.upto if upto is None else int(upto)
    delta = bdsde_residual(sol, ens, driver, state, k)
    Y = np.zeros((ens.n_paths, ens.grid.n_steps + 1))
    Y[:, :k + 1] = sol.Y[:, :k + 1]
    left, right = cell_endpoints(Y, frame.gamma.values, k)
    return [duality_check(left, right, delta, F, ens) for F in family]


def node_means(values: np.ndarray, n_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Column means and their standard errors, treating fBm groups as the sampling unit."""
    means = values.mean(axis=0)
    ses = np.array([standard_error(values[:, j], n_w) for j in range(values.shape[1])])
    return means, ses


def apriori_quantity(sol: BsdeSolution, n_w: int, dt: float) -> np.ndarray:
    """Per fBm path ``E^W[sup_t |Yhat_t|^2 + int |Zhat|^2 dt]``."""
    val = np.max(sol.Yhat ** 2, axis=1) + dt * np.sum(sol.Zhat ** 2, axis=(1, 2))
    return val.reshape(-1, n_w).mean(axis=1)


def weighted_moment(Y: np.ndarray, Z: np.ndarray, sup_ig: np.ndarray, p: float, dt: float) -> float:
    """``E[exp(p I*_T) int (|Y|^2 + |Z|^2) dt]`` with trapezoid in Y and cell sums in Z."""
    y2 = dt * (np.sum(Y ** 2, axis=1) - 0.5 * (Y[:, 0] ** 2 + Y[:, -1] ** 2))
    z2 = dt * np.sum(Z ** 2, axis=(1, 2))
    return float(np.mean(np.exp(p * sup_ig) * (y2 + z2)))


def fit_exponent(x: np.ndarray, log_y: np.ndarray) -> float:
    """Slope of the least-squares line ``log y = a + k x``."""
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, log_y, rcond=None)
    return float(coef[1])


def self_convergence_order(means: list[float]) -> float:
    """Order from three results on grids refined by a factor of two."""
    d1 = abs(means[0] - means[1])
    d2 = abs(means[1] - means[2])
    return float(np.log2(d1 / d2))
