"""The scalar anticipating equation ``dX = b(s, X) ds + gamma X dB``.

The solution is built by conjugation: solve the pathwise ODE

    zeta_t(x) = x + int_0^t e_s^{-1} b(T_s, s, e_s zeta_s(x)) ds,   e_s = eps_s(T_s),

then set ``X_t = eps_t zeta_t(A_t, xi(A_t))``.  All the shift algebra is the
closed form held by the Girsanov frame, so composing with ``A_t`` only moves
``log e`` by ``-c_{s,t}`` and the B nodes by ``-b_offset[:, t]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .divergence import cell_endpoints, duality_check
from .functionals import TestFunctional
from .girsanov import CheckRow, GirsanovFrame, log_epsilon, log_epsilon_transformed
from .kernels import anticipating_sweep, zeta_trajectory
from .paths import PathEnsemble


class BlowUpError(ArithmeticError):
    """A time-stepping scheme produced non-finite values."""


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``b(t, x, B_t)`` with its declared (H2) envelope.

    ``nu`` bounds the Lipschitz constant in ``x`` (constant in time here) and
    ``bound`` bounds ``|b(t, 0)|``.  ``params`` marks the parametric family
    ``c0 + c1 x + c2 sin x + c3 cos B_t`` that the compiled kernels know.
    """

    name: str
    fn: Callable
    nu: float
    bound: float
    params: tuple | None = None

    def __call__(self, t, x, bv):
        return self.fn(t, x, bv)

    @classmethod
    def parametric(cls, name: str, c0=0.0, c1=0.0, c2=0.0, c3=0.0) -> "DriftSpec":
        def fn(t, x, bv):
            return c0 + c1 * x + c2 * np.sin(x) + c3 * np.cos(bv)

        return cls(name, fn, abs(c1) + abs(c2), abs(c0) + abs(c3), (c0, c1, c2, c3))

    def conjugated(self):
        """Right-hand side ``(t, z, e, bv) -> b(t, e z, bv) / e`` of the pathwise ODE."""
        return lambda t, z, e, bv: self.fn(t, e * z, bv) / e

    def spot_check(self, horizon: float = 1.0, n_samples: int = 2000, seed: int = 0):
        """Sample ``|b(t,x) - b(t,y)| <= nu |x - y|`` and ``|b(t,0)| <= bound``."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, horizon, n_samples)
        x, y = rng.normal(0.0, 10.0, (2, n_samples))
        bv = rng.normal(0.0, 2.0, n_samples)
        lhs = np.abs(self.fn(t, x, bv) - self.fn(t, y, bv))
        slack = 1e-12 * (1.0 + np.abs(x) + np.abs(y))
        bad = lhs > self.nu * np.abs(x - y) + slack
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ValueError(f"drift {self.name!r} violates its Lipschitz envelope nu={self.nu} "
                             f"at t={t[k]:.4g}, x={x[k]:.4g}, y={y[k]:.4g}")
        at_zero = np.abs(self.fn(t, np.zeros(n_samples), bv))
        if np.any(at_zero > self.bound * (1 + 1e-12)):
            raise ValueError(f"drift {self.name!r} exceeds its bound L={self.bound} at x=0")


DRIFTS = {
    "zero": DriftSpec.parametric("zero"),
    "one": DriftSpec.parametric("one", c0=1.0),
    "linear": DriftSpec.parametric("linear", c1=0.5),
    "mixed": DriftSpec.parametric("mixed", c0=0.2, c1=-0.3, c2=0.4, c3=0.25),
}


def _xi_values(xi, ens: PathEnsemble, frame: GirsanovFrame, shift_node=None) -> np.ndarray:
    if isinstance(xi, TestFunctional):
        shift = None if shift_node is None else (-1, shift_node)
        return xi.evaluate(ens, frame, shift)
    return np.full(ens.n_paths, float(xi))


def _check_finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise BlowUpError(f"{what} became non-finite at path {bad[0]}, node {bad[-1]}")
    return values


def _solver_args(drift: DriftSpec):
    if drift.params is not None:
        return {"params": drift.params}
    return {"drift": drift.conjugated()}


def solve_zeta(ens: PathEnsemble, frame: GirsanovFrame, drift: DriftSpec, x0, substeps: int = 1) -> np.ndarray:
    """``zeta_t(omega, x0)`` at every node, shape (N, n+1).

    ``x0`` is a number, a per-path array or a functional of B.
    """
    if not isinstance(x0, (int, float, np.ndarray)):
        x0 = _xi_values(x0, ens, frame)
    log_e = log_epsilon_transformed(ens, frame)
    bvals = ens.B + np.diag(frame.b_offset)
    out = zeta_trajectory(log_e, bvals, x0, ens.grid.dt, substeps, **_solver_args(drift))
    return _check_finite(out, "zeta")


@dataclass(frozen=True, eq=False)
class AnticipatingSolution:
    X: np.ndarray            # (N, n+1)
    zeta: np.ndarray         # zeta_{t_j}(A_{t_j}, xi(A_{t_j})) in column j
    log_eps: np.ndarray      # log eps_{t_j} on the base paths
    xi: np.ndarray           # xi on the base paths
    substeps: int

    def second_moments(self) -> np.ndarray:
        return np.mean(self.X ** 2, axis=0)


def solve_anticipating(ens: PathEnsemble, frame: GirsanovFrame, drift: DriftSpec, xi,
                       substeps: int = 1) -> AnticipatingSolution:
    n = ens.grid.n_steps
    xi_shifted = np.column_stack([_xi_values(xi, ens, frame, j) for j in range(n + 1)])
    log_e = log_epsilon_transformed(ens, frame)
    zeta = anticipating_sweep(log_e, ens.B, frame.cross, frame.b_offset, xi_shifted,
                              ens.grid.dt, substeps, **_solver_args(drift))
    _check_finite(zeta, "zeta")
    log_eps = log_epsilon(ens, frame)
    X = _check_finite(np.exp(log_eps) * zeta, "X")
    return AnticipatingSolution(X, zeta, log_eps, xi_shifted[:, 0], substeps)


def drift_integral(sol: AnticipatingSolution, ens: PathEnsemble, drift: DriftSpec, upto: int) -> np.ndarray:
    """Trapezoid ``int_0^{t_upto} b(s, X_s) ds`` on the base paths."""
    t = ens.grid.nodes
    vals = np.column_stack([drift(t[i], sol.X[:, i], ens.B[:, i]) for i in range(upto + 1)])
    return ens.grid.dt * (vals.sum(axis=1) - 0.5 * (vals[:, 0] + vals[:, -1]))


def residual_divergence(sol: AnticipatingSolution, ens: PathEnsemble, drift: DriftSpec, upto: int) -> np.ndarray:
    """``delta(gamma X 1_[0,t]) := X_t - xi - int_0^t b(s, X_s) ds``."""
    return sol.X[:, upto] - sol.xi - drift_integral(sol, ens, drift, upto)


def residual_duality_check(sol: AnticipatingSolution, ens: PathEnsemble, frame: GirsanovFrame,
                           drift: DriftSpec, family, t=None) -> list[CheckRow]:
    upto = ens.grid.n_steps if t is None else frame.node(t)
    delta = residual_divergence(sol, ens, drift, upto)
    left, right = cell_endpoints(sol.X, frame.gamma.values, upto)
    return [duality_check(left, right, delta, F, ens) for F in family]


def heun_self_convergence(ens: PathEnsemble, frame: GirsanovFrame, drift: DriftSpec, xi,
                          base_substeps: int = 1) -> float:
    """Empirical order from successive substep doublings, from RMS differences of X."""
    sols = [solve_anticipating(ens, frame, drift, xi, base_substeps * 2 ** k).X for k in range(3)]
    d1 = np.sqrt(np.mean((sols[0] - sols[1]) ** 2))
    d2 = np.sqrt(np.mean((sols[1] - sols[2]) ** 2))
    return float(np.log2(d1 / d2))


def solution_table(sol: AnticipatingSolution, ens: PathEnsemble) -> list[tuple]:
    """Rows ``path, t, X, zeta, epsilon``."""
    t = ens.grid.nodes
    eps = np.exp(sol.log_eps)
    return [(p, t[j], sol.X[p, j], sol.zeta[p, j], eps[p, j])
            for p in range(ens.n_paths) for j in range(len(t))]
