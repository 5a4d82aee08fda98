"""Polynomial functionals of finitely many Gaussian coordinates.

A functional is ``F = f(B(phi_1), .., B(phi_k), W(psi_1), .., W(psi_m))`` with
``f`` a polynomial, ``phi_i`` step functions and ``psi_j`` node functions.
Its Malliavin derivative in the fBm direction is ``sum_i d_i f * phi_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fbm import op_K
from .grid import GridFunction, TimeGrid


def _poly_eval(coeffs: dict, x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape[0])
    for powers, c in coeffs.items():
        term = np.full(x.shape[0], float(c))
        for i, p in enumerate(powers):
            if p:
                term = term * x[:, i] ** p
        out += term
    return out


def _poly_partial(coeffs: dict, i: int) -> dict:
    out = {}
    for powers, c in coeffs.items():
        if powers[i]:
            lowered = list(powers)
            lowered[i] -= 1
            out[tuple(lowered)] = out.get(tuple(lowered), 0.0) + c * powers[i]
    return out


@dataclass(frozen=True, eq=False)
class TestFunctional:
    __test__ = False  # not a pytest class

    name: str
    coeffs: dict
    b_args: tuple = ()
    w_args: tuple = field(default=())

    def __post_init__(self):
        k = len(self.b_args) + len(self.w_args)
        if k > 3:
            raise ValueError("at most 3 Gaussian coordinates are supported")
        for powers in self.coeffs:
            if len(powers) != k:
                raise ValueError(f"monomial {powers} does not match {k} coordinates")
            if sum(powers) > 4:
                raise ValueError("polynomial degree is limited to 4")
        for phi in self.b_args:
            if phi.kind != "cell":
                raise ValueError("fBm arguments must be step functions")

    @property
    def kind(self) -> str:
        if self.w_args:
            return "mixed-with-W"
        degree = max((sum(p) for p in self.coeffs), default=0)
        return {0: "constant", 1: "linear-in-B"}.get(degree, "polynomial-in-B")

    def b_coordinates(self, ens, frame=None, shift=None) -> np.ndarray:
        """``B(phi_i)`` per path; ``shift=(sign, node)`` composes with T (+) or A (-)."""
        cols = []
        for phi in self.b_args:
            kphi = op_K(phi, ens.hurst).values
            val = ens.dW0 @ kphi
            if shift is not None:
                sign, node = shift
                val = val + sign * frame.offset(kphi, node)
            cols.append(val)
        return np.column_stack(cols) if cols else np.zeros((ens.n_paths, 0))

    def w_coordinates(self, ens) -> np.ndarray:
        cols = []
        for psi in self.w_args:
            vals = psi.values[:-1] if psi.kind == "node" else psi.values
            cols.append(ens.dW[:, :, 0] @ vals)
        return np.column_stack(cols) if cols else np.zeros((ens.n_paths, 0))

    def coordinates(self, ens, frame=None, shift=None) -> np.ndarray:
        return np.hstack([self.b_coordinates(ens, frame, shift), self.w_coordinates(ens)])

    def evaluate(self, ens, frame=None, shift=None) -> np.ndarray:
        return _poly_eval(self.coeffs, self.coordinates(ens, frame, shift))

    def b_derivative_weights(self, ens) -> np.ndarray:
        """``d_i f`` at every path for each fBm coordinate, shape (N, k_B)."""
        x = self.coordinates(ens)
        return np.column_stack([_poly_eval(_poly_partial(self.coeffs, i), x)
                                for i in range(len(self.b_args))]) if self.b_args else np.zeros((ens.n_paths, 0))


def constant(grid: TimeGrid, c: float = 1.0) -> TestFunctional:
    return TestFunctional(f"const_{c:g}", {(): c})


def b_power(grid: TimeGrid, t: float, power: int, coeff: float = 1.0) -> TestFunctional:
    phi = GridFunction.indicator(grid, 0.0, t)
    name = f"B_{t:g}" if power == 1 else f"B_{t:g}^{power}"
    return TestFunctional(name, {(power,): coeff}, (phi,))


def registered_family(grid: TimeGrid) -> list[TestFunctional]:
    """Functionals used by the Girsanov and duality checks."""
    T = grid.horizon
    half = grid.nodes[grid.n_steps // 2]
    quarter = grid.nodes[grid.n_steps // 4]
    last = grid.nodes[-1]
    ind = GridFunction.indicator
    psi = GridFunction.from_callable(grid, lambda s: np.cos(np.pi * s / T))
    return [
        constant(grid),
        b_power(grid, half, 1),
        b_power(grid, half, 2),
        b_power(grid, last, 2),
        TestFunctional(f"B_{last:g}*B_{half:g}", {(1, 1): 1.0}, (ind(grid, 0, last), ind(grid, 0, half))),
        TestFunctional(f"B[{quarter:g},{last:g}]^3", {(3,): 1.0}, (ind(grid, quarter, last),)),
        TestFunctional(f"B_{half:g}*W(cos)", {(1, 1): 1.0}, (ind(grid, 0, half),), (psi,)),
    ]


def duality_family(grid: TimeGrid) -> list[TestFunctional]:
    """The three functionals of the solver-residual duality checks."""
    half = grid.nodes[grid.n_steps // 2]
    return [constant(grid), b_power(grid, half, 1), b_power(grid, half, 2)]
