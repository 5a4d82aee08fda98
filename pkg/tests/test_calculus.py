import math

import numpy as np
import pytest
from scipy import special

from fracbdsde.calculus import frac_derivative_left, frac_derivative_right, frac_integral_left, frac_integral_right
from fracbdsde.grid import GridFunction, Hurst, TimeGrid, l2_grid_norm

import oracles


# -- grid types -------------------------------------------------------------

def test_nodes_uniform_and_anchored():
    g = TimeGrid(1.0, 64)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.allclose(np.diff(g.nodes), g.dt, rtol=0, atol=4 * np.finfo(float).eps)


@pytest.mark.parametrize("steps", [0, 1, 2.5])
def test_grid_rejects_too_few_steps(steps):
    with pytest.raises(ValueError):
        TimeGrid(1.0, steps)


@pytest.mark.parametrize("h", [0.0, -0.1, 0.5, 0.6])
def test_hurst_range(h):
    with pytest.raises(ValueError):
        Hurst(h)


@pytest.mark.parametrize("h", [0.1, 0.25, 0.3, 0.4])
def test_c_h_matches_beta_formula(h):
    assert Hurst(h).c_h == pytest.approx(oracles.c_h(h), rel=1e-12)


def test_grid_function_length_checked():
    g = TimeGrid(1.0, 8)
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(8), "node")
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(9), "cell")


def test_index_of_rejects_off_node():
    g = TimeGrid(1.0, 8)
    assert g.index_of(0.25) == 2
    with pytest.raises(ValueError):
        g.index_of(0.3)


# -- power rules [TRIVIAL] ----------------------------------------------------

@pytest.fixture(scope="module")
def grid256():
    return TimeGrid(1.0, 256)


def test_right_integral_of_one(grid256):
    a = 0.2
    x = grid256.nodes
    got = frac_integral_right(GridFunction.from_callable(grid256, np.ones_like), a).values
    assert np.allclose(got, (1 - x) ** a / special.gamma(1 + a), rtol=0, atol=1e-12)


def test_left_integral_of_one(grid256):
    a = 0.35
    x = grid256.nodes
    got = frac_integral_left(GridFunction.from_callable(grid256, np.ones_like), a).values
    assert np.allclose(got, x ** a / special.gamma(1 + a), rtol=0, atol=1e-12)


def test_derivatives_of_constant(grid256):
    a, c = 0.2, 2.5
    s = grid256.nodes
    f = GridFunction.from_callable(grid256, lambda u: np.full_like(u, c))
    right = frac_derivative_right(f, a).values[:-1]
    left = frac_derivative_left(f, a).values[1:]
    assert np.allclose(right, c * (1 - s[:-1]) ** -a / special.gamma(1 - a), rtol=1e-12)
    assert np.allclose(left, c * s[1:] ** -a / special.gamma(1 - a), rtol=1e-12)


def test_zero_maps_to_zero(grid256):
    z = GridFunction(grid256, np.zeros(257))
    for op in (frac_integral_right, frac_integral_left, frac_derivative_right, frac_derivative_left):
        assert not np.any(np.nan_to_num(op(z, 0.3).values))


@pytest.mark.parametrize("op", [frac_integral_right, frac_derivative_left])
@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
def test_alpha_outside_unit_interval_rejected(grid256, op, alpha):
    with pytest.raises(ValueError):
        op(GridFunction(grid256, np.ones(257)), alpha)


# -- quadrature oracles [DERIVED] ------------------------------------------

def test_right_integral_of_identity_at_zero():
    g = TimeGrid(1.0, 64)
    f = GridFunction.from_callable(g, lambda u: u)
    got = frac_integral_right(f, 0.3).values[0]
    assert got == pytest.approx(oracles.right_integral(lambda u: u, 0.3, 1.0, 0.0), rel=1e-12)


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.45])
def test_right_and_left_integrals_of_polynomials(alpha):
    # piecewise-linear interpolation of u^3 on 512 cells: O(dt^2) error
    g = TimeGrid(2.0, 512)
    fn = lambda u: 1 - u + u ** 3 / 4
    f = GridFunction.from_callable(g, fn)
    right = frac_integral_right(f, alpha).values
    left = frac_integral_left(f, alpha).values
    for j in (0, 100, 256, 400, 511):
        x = g.nodes[j]
        assert right[j] == pytest.approx(oracles.right_integral(fn, alpha, 2.0, x), abs=5e-5)
        assert left[j + 1] == pytest.approx(oracles.left_integral(fn, alpha, g.nodes[j + 1]), abs=5e-5)


def test_marchaud_of_power_is_constant():
    """``D^a_{T-} (T-u)^a = Gamma(1+a)``; the grid error shrinks with refinement away from ``T``."""
    a = 0.2
    errs = []
    for n in (256, 1024, 4096):
        g = TimeGrid(1.0, n)
        d = frac_derivative_right(GridFunction.from_callable(g, lambda u: (1 - u) ** a), a).values
        mid = g.index_of(0.5)
        errs.append(abs(d[mid] - special.gamma(1 + a)))
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.02


# -- inversion ---------------------------------------------------------------

@pytest.mark.parametrize("side", ["right", "left"])
def test_inversion_converges_for_identity(side):
    a = 0.2
    errs = []
    for n in (256, 1024):
        g = TimeGrid(1.0, n)
        f = GridFunction.from_callable(g, lambda u: u)
        if side == "right":
            back = frac_derivative_right(frac_integral_right(f, a), a)
            errs.append(l2_grid_norm(np.nan_to_num(back.values - f.values), g, skip_right=True))
        else:
            back = frac_derivative_left(frac_integral_left(f, a), a)
            errs.append(l2_grid_norm(np.nan_to_num(back.values - f.values), g, skip_left=True))
    order = math.log(errs[0] / errs[1]) / math.log(4)
    assert order >= 0.4


def test_left_inversion_on_512_cells():
    g = TimeGrid(1.0, 512)
    f = GridFunction.from_callable(g, lambda u: u)
    back = frac_derivative_left(frac_integral_left(f, 0.2), 0.2)
    assert l2_grid_norm(np.nan_to_num(back.values - f.values), g, skip_left=True) < 1e-5


@pytest.mark.parametrize("n", [100, 200, 300])
def test_marchaud_finite_at_every_interior_node(n):
    # node times like 0.145 = 29 * 0.005 divide to just under an integer
    g = TimeGrid(1.0, n)
    d = frac_derivative_right(GridFunction.from_callable(g, lambda u: np.cos(3 * u)), 0.3).values
    assert np.all(np.isfinite(d[:-1])) and np.isnan(d[-1])
