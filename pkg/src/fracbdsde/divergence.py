"""Divergence with respect to B and the backward Ito integral in W.

For deterministic integrands the divergence is the Wiener integral of the
transferred integrand.  For random integrands coming out of a solver it is
identified from the equation residual and then tested through the duality
``E[<K*K D^B F, u>] = E[F delta(u)]``.
"""

from __future__ import annotations

import numpy as np

from .fbm import kstark_pairing_weights, op_K
from .girsanov import CheckRow, paired_row
from .grid import GridFunction
from .paths import PathEnsemble


def divergence_deterministic(u: GridFunction, ens: PathEnsemble) -> np.ndarray:
    """Per-path ``sum_i (Ku)_i dW0_i`` for a deterministic step integrand."""
    if u.kind != "cell":
        raise ValueError("deterministic integrands must be step functions")
    return ens.dW0 @ op_K(u, ens.hurst).values


def cell_endpoints(node_values: np.ndarray, gamma_cells: np.ndarray | None = None,
                   upto: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Left and right cell limits of ``gamma * u * 1_[0, t_upto]``.

    ``node_values`` has shape (N, n+1) and ``u`` is taken linear inside cells.
    """
    left = np.array(node_values[:, :-1], dtype=float)
    right = np.array(node_values[:, 1:], dtype=float)
    if gamma_cells is not None:
        left *= gamma_cells
        right *= gamma_cells
    if upto is not None:
        left[:, upto:] = 0.0
        right[:, upto:] = 0.0
    return left, right


def duality_lhs(u_left: np.ndarray, u_right: np.ndarray, F, ens: PathEnsemble) -> np.ndarray:
    """Per-path ``<K*K D^B F, u>``, exact for cell-linear ``u``."""
    dF = F.b_derivative_weights(ens)
    out = np.zeros(ens.n_paths)
    for i, phi in enumerate(F.b_args):
        wl, wr = kstark_pairing_weights(phi, ens.hurst)
        out += dF[:, i] * (u_left @ wl + u_right @ wr)
    return out


def duality_check(u_left: np.ndarray, u_right: np.ndarray, delta: np.ndarray, F,
                  ens: PathEnsemble) -> CheckRow:
    """Monte Carlo comparison of both sides of the duality relation.

    ``u_left``/``u_right`` are (N, n) cell limits of the integrand and
    ``delta`` the candidate divergence per path.
    """
    lhs = duality_lhs(u_left, u_right, F, ens)
    rhs = F.evaluate(ens) * delta
    return paired_row(F.name, lhs, rhs, ens.n_w)


def deterministic_duality_check(u: GridFunction, F, ens: PathEnsemble) -> CheckRow:
    delta = divergence_deterministic(u, ens)
    row = np.broadcast_to(u.values, (ens.n_paths, u.grid.n_steps))
    return duality_check(row, row, delta, F, ens)


def backward_ito_integral(z: np.ndarray, ens: PathEnsemble, cumulative: bool = False) -> np.ndarray:
    """Right-endpoint sums ``sum_i z_{t_{i+1}} (W_{t_{i+1}} - W_{t_i})``.

    ``z[:, i]`` is the integrand value at ``t_{i+1}``, shape (N, n) or
    (N, n, d).  With ``cumulative`` the integral over ``[0, t_j]`` is
    returned for every node, shape (N, n+1).
    """
    if z.ndim == 2:
        z = z[:, :, None]
    terms = np.einsum("pid,pid->pi", z, ens.dW)
    if not cumulative:
        return terms.sum(axis=1)
    out = np.zeros((ens.n_paths, ens.grid.n_steps + 1))
    np.cumsum(terms, axis=1, out=out[:, 1:])
    return out
