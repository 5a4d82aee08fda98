"""Markovian layer: forward SDE, value fields and the pathwise PDE.

The forward equation ``dX = -b ds - sigma dW`` (backward Ito) with ``X_t = x``
is an ordinary SDE in reversed time, so it is stepped from ``t`` down to 0
with the increment to the right of each node.  The value field
``uhat(t, x) = Yhat_t^{t,x}`` is computed for one frozen fBm path at a time
with Brownian ensembles underneath, and ``u(t, x) = uhat(A_t, t, x) eps_t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bdsde import (BasisConfig, DriverSpec, SolverBlowUp, TerminalSpec, TERMINALS, _sweep, driver_catalog,
                    fit_exponent, transformed_driver)
from .girsanov import GirsanovFrame, log_epsilon, log_epsilon_transformed, running_sup
from .paths import PathEnsemble


class CFLError(ValueError):
    pass


class SingularFlowError(ArithmeticError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients ``b``, ``sigma`` (diagonal, per axis), terminal ``Phi`` and driver ``f``.

    ``b`` and ``sigma`` map (N, d) states to (N, d).  ``db`` and ``dsigma``
    are their diagonal derivatives, needed only for the variational Z.
    ``constant`` holds ``(b, sigma)`` when both are constant and scalar.
    """

    name: str
    dim: int
    b: Callable
    sigma: Callable
    phi: TerminalSpec
    driver: DriverSpec
    b_lipschitz: float
    sigma_lipschitz: float
    db: Callable | None = None
    dsigma: Callable | None = None
    constant: tuple | None = None

    def spot_check(self, n_samples: int = 2000, seed: int = 0):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(0.0, 5.0, (2, n_samples, self.dim))
        gap = np.linalg.norm(x - y, axis=1)
        for name, fn, lip in (("b", self.b, self.b_lipschitz), ("sigma", self.sigma, self.sigma_lipschitz)):
            lhs = np.linalg.norm(fn(x) - fn(y), axis=1)
            if np.any(lhs > lip * gap * (1 + 1e-12) + 1e-12):
                raise ValueError(f"{name} of coefficient set {self.name!r} violates its Lipschitz constant {lip}")
        self.driver.spot_check(self.dim)

    def generator_1d(self, x, u, ux, uxx):
        return 0.5 * self.sigma(x[:, None])[:, 0] ** 2 * uxx + self.b(x[:, None])[:, 0] * ux


def _const(value, dim):
    def fn(x):
        return np.full(x.shape, float(value))
    return fn


def _zeros_like(x):
    return np.zeros_like(x)


def constant_coefficients(grid, name: str, phi: TerminalSpec, driver: DriverSpec,
                          b: float = 0.0, sigma: float = 1.0) -> CoefficientSet:
    return CoefficientSet(name, 1, _const(b, 1), _const(sigma, 1), phi, driver, 0.0, 0.0,
                          _zeros_like, _zeros_like, (b, sigma))


def coefficient_catalog(grid) -> dict[str, CoefficientSet]:
    drivers = driver_catalog(grid)
    zero = drivers["zero"]
    return {
        "brownian_identity": constant_coefficients(grid, "brownian_identity", TERMINALS["identity"], zero),
        "brownian_square": constant_coefficients(grid, "brownian_square", TERMINALS["square"], zero),
        "heat": constant_coefficients(grid, "heat", TERMINALS["affine_square"], zero, b=0.2),
        "linear": constant_coefficients(grid, "linear", TERMINALS["affine_square"], drivers["linear"], b=0.2),
        "mean_reverting": CoefficientSet(
            "mean_reverting", 1, lambda x: -0.5 * x, lambda x: 0.8 + 0.2 * np.sin(x),
            TERMINALS["square"], zero, 0.5, 0.2,
            lambda x: np.full(x.shape, -0.5), lambda x: 0.2 * np.cos(x)),
        "plane": CoefficientSet(
            "plane", 2, lambda x: -0.5 * x, lambda x: np.full(x.shape, 0.8),
            TerminalSpec("plane_square", {(2, 0): 1.0, (0, 1): 1.0}), zero, 0.5, 0.0),
    }


def simulate_forward(coeff: CoefficientSet, ens: PathEnsemble, t_node: int, x) -> np.ndarray:
    """``X_s^{t,x}`` at nodes ``0..t_node``, shape (N, t_node+1, d).

    ``x`` is one point (d,) or one point per path (N, d).
    """
    if ens.dim_w < coeff.dim:
        raise ValueError(f"ensemble carries {ens.dim_w} Brownian components, need {coeff.dim}")
    dt = ens.grid.dt
    X = np.empty((ens.n_paths, t_node + 1, coeff.dim))
    X[:, t_node] = np.broadcast_to(np.asarray(x, dtype=float), (ens.n_paths, coeff.dim))
    for j in range(t_node - 1, -1, -1):
        cur = X[:, j + 1]
        X[:, j] = cur + coeff.b(cur) * dt + coeff.sigma(cur) * ens.dW[:, j, :coeff.dim]
        if not np.all(np.isfinite(X[:, j])):
            raise SolverBlowUp(f"forward SDE blew up at node {j}")
    return X


def _sub_ensemble(ens: PathEnsemble, dim: int) -> PathEnsemble:
    if ens.dim_w == dim:
        return ens
    return PathEnsemble(ens.grid, ens.hurst, ens.seed, ens.dW0, ens.B, ens.dW[:, :, :dim], ens.n_w, ens.shifts)


@dataclass(frozen=True, eq=False)
class FieldGrid:
    t_nodes: np.ndarray
    x: np.ndarray              # (L, d)
    u_hat: np.ndarray          # (T, L)
    se: np.ndarray             # (T, L)
    u: np.ndarray | None = None
    u_se: np.ndarray | None = None
    eps: np.ndarray | None = None   # eps_t of the frozen path at t_nodes

    def growth_ratio(self) -> float:
        """``max |uhat(t, x)| / (1 + |x|)`` over the lattice."""
        norm = np.linalg.norm(self.x, axis=1)
        return float(np.max(np.abs(self.u_hat) / (1.0 + norm[None, :])))

    def rows(self) -> list[tuple]:
        """``t, x, u_hat, u, se`` rows (first space coordinate for d = 1)."""
        out = []
        for a, t in enumerate(self.t_nodes):
            for b in range(self.x.shape[0]):
                xs = self.x[b, 0] if self.x.shape[1] == 1 else tuple(self.x[b])
                u = np.nan if self.u is None else self.u[a, b]
                out.append((t, xs, self.u_hat[a, b], u, self.se[a, b]))
        return out


def _field_at(coeff, tiled, log_e, t, lattice, basis):
    """Group means of ``Yhat_t`` for every lattice point, and their standard errors."""
    X = simulate_forward(coeff, tiled, t, np.repeat(lattice, tiled.n_w, axis=0))
    xi = coeff.phi(X[:, 0])
    L = lattice.shape[0]
    if t == 0:
        return xi.reshape(L, -1).mean(axis=1), np.zeros(L), X
    F = transformed_driver(log_e, coeff.driver, tiled.grid)
    res = _sweep(tiled, F, xi, X, basis, t)
    # adjacent paths are averaged first so antithetic pairs give a valid SE
    raw = res.pathwise.reshape(L, -1, 2).mean(axis=2)
    return res.Yhat[:, t].reshape(L, -1).mean(axis=1), raw.std(axis=1, ddof=1) / np.sqrt(raw.shape[1]), X


def value_fields(coeff: CoefficientSet, frame: GirsanovFrame | None, ens: PathEnsemble, lattice,
                 t_nodes, basis: BasisConfig | None = None, with_u: bool = True) -> FieldGrid:
    """``uhat`` (and ``u``) on ``t_nodes x lattice`` for the single fBm path of ``ens``."""
    if ens.n_b != 1:
        raise ValueError("a field is evaluated on one frozen fBm path")
    basis = basis or BasisConfig()
    lattice = np.asarray(lattice, dtype=float).reshape(-1, coeff.dim)
    t_nodes = np.asarray(t_nodes, dtype=int)
    tiled = _sub_ensemble(ens, coeff.dim).tile(lattice.shape[0])
    log_e = None if frame is None else log_epsilon_transformed(tiled, frame)
    shape = (len(t_nodes), lattice.shape[0])
    u_hat, se = np.empty(shape), np.empty(shape)
    u = u_se = eps = None
    if with_u and frame is not None:
        u, u_se, eps = np.empty(shape), np.empty(shape), np.empty(len(t_nodes))
        log_eps = log_epsilon(tiled, frame)[0]
    for a, t in enumerate(t_nodes):
        u_hat[a], se[a], _ = _field_at(coeff, tiled, log_e, t, lattice, basis)
        if u is not None:
            shifted = log_e[:, :t + 1] - frame.cross[:t + 1, t]
            val, err, _ = _field_at(coeff, tiled, shifted, t, lattice, basis)
            eps[a] = np.exp(log_eps[t])
            u[a], u_se[a] = val * eps[a], err * eps[a]
    if u is None and with_u:
        u, u_se, eps = u_hat.copy(), se.copy(), np.ones(len(t_nodes))
    return FieldGrid(ens.grid.nodes[t_nodes], lattice, u_hat, se, u, u_se, eps)


def heat_closed_form(coeff: CoefficientSet, t: float, x: np.ndarray) -> np.ndarray:
    """``E[Phi(x + b t + sigma W_t)]`` for constant coefficients and quadratic ``Phi``."""
    if coeff.constant is None:
        raise ValueError("closed form needs constant coefficients")
    b, sigma = coeff.constant
    c0, c1, c2 = coeff.phi.quadratic_1d()
    mu = np.asarray(x, dtype=float) + b * t
    return c0 + c1 * mu + c2 * (mu ** 2 + sigma ** 2 * t)


def choose_x_max(coeff: CoefficientSet, ens: PathEnsemble, t_node: int, x_edge: float,
                 tol: float = 1e-4) -> float:
    """Smallest truncation with estimated exit probability below ``tol`` from ``+-x_edge``."""
    sub = _sub_ensemble(ens, 1)
    sup = np.concatenate([np.abs(simulate_forward(coeff, sub, t_node, s * x_edge)[:, :, 0]).max(axis=1)
                          for s in (-1.0, 1.0)])
    scale = float(coeff.sigma(np.zeros((1, 1)))[0, 0]) * np.sqrt(ens.grid.nodes[t_node]) + 1e-12
    x_max = x_edge + 3.0 * scale
    while np.mean(sup > x_max) >= tol or np.mean(sup > x_max) * len(sup) >= 1:
        x_max += 0.5 * scale
    return float(x_max)


def fd_time_step(dx: float, sigma_max: float, safety: float = 0.4) -> float:
    return safety * dx ** 2 / max(sigma_max ** 2, 1e-300)


def solve_pathwise_pde(coeff: CoefficientSet, log_e_path: np.ndarray | None, grid, x_max: float,
                       t_nodes, n_x: int = 201, dt_fd: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Explicit central differences for ``d uhat = [L uhat + F(x, uhat, sigma uhat_x)] dt``.

    ``F`` is the transformed driver with ``e_s = eps_s(T_s)`` of the frozen
    path, log-linearly interpolated between grid nodes.  Boundary values are
    extrapolated linearly.  Returns the lattice and the field at ``t_nodes``.
    """
    if coeff.dim != 1:
        raise ValueError("the finite-difference check is one-dimensional")
    x = np.linspace(-x_max, x_max, n_x)
    dx = x[1] - x[0]
    sig = coeff.sigma(x[:, None])[:, 0]
    limit = fd_time_step(dx, float(np.max(np.abs(sig))), safety=0.5)
    if dt_fd is None:
        dt_fd = fd_time_step(dx, float(np.max(np.abs(sig))))
    if dt_fd > limit:
        raise CFLError(f"time step {dt_fd:.3g} violates the stability limit {limit:.3g}; "
                       f"use dt <= {fd_time_step(dx, float(np.max(np.abs(sig)))):.3g}")
    t_nodes = np.asarray(t_nodes, dtype=int)
    targets = grid.nodes[t_nodes]
    u = coeff.phi(x[:, None])
    out = np.empty((len(t_nodes), n_x))
    tau, k = 0.0, 0
    nodes = grid.nodes
    for a, target in enumerate(targets):
        while tau < target - 1e-14:
            h = min(dt_fd, target - tau)
            ux = np.empty_like(u)
            uxx = np.empty_like(u)
            ux[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
            uxx[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx ** 2
            rate = coeff.generator_1d(x, u, ux, uxx)
            if log_e_path is None:
                e = 1.0
            else:
                e = np.exp(np.interp(tau, nodes, log_e_path))
            y, z = u * e, (sig * ux * e)[:, None]
            # driver time: the cell containing (tau, tau + h)
            rate = rate + coeff.driver(tau + h, x[:, None], y, z) / e
            u = u + h * rate
            u[0] = 2 * u[1] - u[2]
            u[-1] = 2 * u[-2] - u[-3]
            tau += h
            k += 1
        out[a] = u
    return x, out


@dataclass(frozen=True)
class CrossCheckRow:
    t: float
    x: float
    fd: float
    mc: float
    se: float

    @property
    def discrepancy(self) -> float:
        return self.mc - self.fd

    def passed(self, rel: float = 0.02, n_se: float = 4.0) -> bool:
        return abs(self.discrepancy) <= max(rel * abs(self.fd), n_se * self.se)


def pde_crosscheck(coeff: CoefficientSet, frame: GirsanovFrame | None, ens: PathEnsemble, mc_points,
                   t_nodes, n_x: int = 201, basis: BasisConfig | None = None,
                   x_max: float | None = None) -> list[CrossCheckRow]:
    """FD field of the pathwise PDE against the Monte Carlo ``uhat`` on the same frozen path."""
    mc_points = np.asarray(mc_points, dtype=float)
    t_nodes = np.asarray(t_nodes, dtype=int)
    if x_max is None:
        x_max = choose_x_max(coeff, ens, int(t_nodes.max()), float(np.max(np.abs(mc_points))))
    log_e_path = None if frame is None else log_epsilon_transformed(ens, frame)[0]
    x, fd = solve_pathwise_pde(coeff, log_e_path, ens.grid, x_max, t_nodes, n_x)
    field = value_fields(coeff, frame, ens, mc_points, t_nodes, basis, with_u=False)
    rows = []
    for a, t in enumerate(field.t_nodes):
        fd_at = np.interp(mc_points, x, fd[a])
        for b, xp in enumerate(mc_points):
            rows.append(CrossCheckRow(float(t), float(xp), float(fd_at[b]), float(field.u_hat[a, b]),
                                      float(field.se[a, b])))
    return rows


@dataclass(frozen=True, eq=False)
class VariationalState:
    X: np.ndarray          # (N, t+1)
    grad_X: np.ndarray     # (N, t+1)
    Y_var: np.ndarray      # (N, t+1)
    Z_var: np.ndarray      # (N, t)
    z_hat: np.ndarray      # (N, t): -Y_var (grad X)^{-1} sigma(X) at node j+1
    Z_regression: np.ndarray   # (N, t): regression estimator at node j+1


def variational_z(coeff: CoefficientSet, frame: GirsanovFrame | None, ens: PathEnsemble, t_node: int,
                  x: float, basis: BasisConfig | None = None) -> VariationalState:
    """Co-simulate the first-variation flow and the linear auxiliary BSDE, then assemble ``zhat``.

    The flow is the derivative of the simulated forward scheme, so
    ``grad X_j = grad X_{j+1} (1 + b'(X_{j+1}) dt + sigma'(X_{j+1}) dW_j)`` and
    ``grad X_t = 1``.  The auxiliary equation has terminal
    ``Phi'(X_0) grad X_0`` and driver ``f_x grad X / e + f_y Y + f_z Z``.
    """
    if coeff.dim != 1 or coeff.db is None or coeff.dsigma is None or coeff.driver.grad is None:
        raise ValueError("the variational representation needs a smooth scalar coefficient set")
    basis = basis or BasisConfig()
    sub = _sub_ensemble(ens, 1)
    dt = ens.grid.dt
    X = simulate_forward(coeff, sub, t_node, x)
    G = np.empty((sub.n_paths, t_node + 1))
    G[:, t_node] = 1.0
    for j in range(t_node - 1, -1, -1):
        cur = X[:, j + 1]
        G[:, j] = G[:, j + 1] * (1.0 + coeff.db(cur)[:, 0] * dt + coeff.dsigma(cur)[:, 0] * sub.dW[:, j, 0])
    if np.any(np.abs(G) < 1e-12):
        raise SingularFlowError("first-variation flow is numerically singular (|grad X| < 1e-12)")

    log_e = None if frame is None else log_epsilon_transformed(sub, frame)
    F = transformed_driver(log_e, coeff.driver, ens.grid)
    xi = coeff.phi(X[:, 0])
    Yhat, Zhat, _, _ = _sweep(sub, F, xi, X, basis, t_node)

    times = ens.grid.nodes
    state = np.concatenate([X, G[:, :, None]], axis=2)
    # next to t the flow is an affine function of X; the feature is then redundant
    for j in range(t_node + 1):
        gx, gg = X[:, j, 0], G[:, j]
        if np.std(gg) > 0 and np.std(gx) > 0 and abs(np.corrcoef(gx, gg)[0, 1]) > 0.999:
            state[:, j, 1] = G[0, j]

    def aux_driver(j, _, y, z):
        e = np.ones(sub.n_paths) if log_e is None else np.exp(log_e[:, j])
        fx, fy, fz = coeff.driver.grad(times[j], X[:, j], Yhat[:, j] * e, Zhat[:, j - 1] * e[:, None])
        return fx[:, 0] * G[:, j] / e + fy * y + fz[:, 0] * z[:, 0]

    xi_var = coeff.phi.gradient(X[:, 0])[:, 0] * G[:, 0]
    Yv, Zv, _, _ = _sweep(sub, aux_driver, xi_var, state, basis, t_node)
    sig = coeff.sigma(X[:, 1:, 0].reshape(-1, 1)).reshape(sub.n_paths, t_node)
    z_hat = -Yv[:, 1:] / G[:, 1:] * sig
    return VariationalState(X[:, :, 0], G, Yv, Zv[:, :, 0], z_hat, Zhat[:, :, 0])


def z_consistency(state: VariationalState) -> float:
    """Relative RMS gap between the regression Z and ``-zhat``."""
    gap = state.Z_regression + state.z_hat
    return float(np.sqrt(np.mean(gap ** 2) / np.mean(state.Z_regression ** 2)))


def growth_sweep(coeff: CoefficientSet, frames: list[GirsanovFrame], ensembles: list[PathEnsemble], lattice,
                 basis: BasisConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(I*_T, log sup_x |uhat(T, x)| / (1 + |x|))`` for every frozen path and amplitude."""
    sups, logs = [], []
    for frame, ens in zip(frames, ensembles):
        for g in range(ens.n_b):
            one = ens.select_groups([g])
            one = PathEnsemble(one.grid, one.hurst, one.seed, one.dW0, one.B, one.dW, one.n_w)
            field = value_fields(coeff, frame, one, lattice, [ens.grid.n_steps], basis, with_u=False)
            sups.append(float(running_sup(one, frame)[0]))
            logs.append(np.log(field.growth_ratio()))
    return np.array(sups), np.array(logs)


def moment_sweep(coeff: CoefficientSet, ens: PathEnsemble, t_node: int, xs, q: float = 2.0) -> np.ndarray:
    """``E[sup_s |X_s|^q] / (1 + |x|^q)`` for every starting point."""
    sub = _sub_ensemble(ens, coeff.dim)
    out = []
    for x in xs:
        X = simulate_forward(coeff, sub, t_node, np.full(coeff.dim, x))
        sup = np.max(np.linalg.norm(X, axis=2), axis=1)
        out.append(np.mean(sup ** q) / (1.0 + abs(x) ** q))
    return np.array(out)


def regularity_exponents(field: FieldGrid) -> tuple[float, float]:
    """Fitted exponents of ``|du|`` against ``|dt|`` and ``|dx|`` on a field lattice."""
    t = field.t_nodes
    x = field.x[:, 0]
    dts, dus = [], []
    for k in range(1, len(t) // 2 + 1):
        dts.append(np.log(t[k] - t[0]))
        dus.append(np.log(np.mean(np.abs(field.u_hat[k:] - field.u_hat[:-k])) + 1e-300))
    t_exp = fit_exponent(np.array(dts), np.array(dus)) if len(dts) > 1 else float("nan")
    dxs, dvs = [], []
    for k in range(1, len(x) // 2 + 1):
        dxs.append(np.log(x[k] - x[0]))
        dvs.append(np.log(np.mean(np.abs(field.u_hat[:, k:] - field.u_hat[:, :-k])) + 1e-300))
    x_exp = fit_exponent(np.array(dxs), np.array(dvs)) if len(dxs) > 1 else float("nan")
    return t_exp, x_exp
