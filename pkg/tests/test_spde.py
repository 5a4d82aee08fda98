import math

import numpy as np
import pytest
from scipy import integrate, stats

from fracbdsde import bdsde as bd
from fracbdsde import spde
from fracbdsde.girsanov import GammaSpec, build_frame, log_epsilon, log_epsilon_transformed
from fracbdsde.grid import Hurst, TimeGrid
from fracbdsde.paths import sample_ensemble

H = Hurst(0.3)
G = TimeGrid(1.0, 32)
ZERO = bd.driver_catalog(G)["zero"]


def brownian(phi, b=0.0, sigma=1.0, driver=ZERO):
    return spde.constant_coefficients(G, "bm", phi, driver, b=b, sigma=sigma)


@pytest.fixture(scope="module")
def frame():
    return build_frame(GammaSpec.pieces(G, [0.0, 0.5], [0.5, -0.3]), H)


@pytest.fixture(scope="module")
def one_path():
    return sample_ensemble(G, H, 50, 1, 4000, antithetic=True)


# -- forward SDE ----------------------------------------------------------------

def test_frozen_forward_without_noise_or_drift():
    e = sample_ensemble(G, H, 1, 3, 5)
    X = spde.simulate_forward(brownian(bd.TERMINALS["identity"], sigma=0.0), e, 20, 0.7)
    assert np.all(X == 0.7)


def test_forward_variance_is_elapsed_time():
    e = sample_ensemble(G, H, 2, 1, 40_000)
    X = spde.simulate_forward(brownian(bd.TERMINALS["identity"]), e, 32, 0.0)[:, 0, 0]
    assert abs(X.var(ddof=1) - 1.0) < 4 * math.sqrt(2 / len(X))
    assert stats.kstest(X, "norm").pvalue > 1e-3


def test_forward_dimension_check():
    e = sample_ensemble(G, H, 1, 1, 4)
    plane = spde.coefficient_catalog(G)["plane"]
    with pytest.raises(ValueError):
        spde.simulate_forward(plane, e, 8, np.zeros(2))


# -- value fields ---------------------------------------------------------------

def test_martingale_field_is_identity(one_path):
    lattice = np.linspace(-1, 1, 5)
    field = spde.value_fields(brownian(bd.TERMINALS["identity"]), None, one_path, lattice, [8, 16, 32])
    assert np.allclose(field.u_hat, lattice[None, :], atol=1e-12)


def test_square_field_adds_elapsed_time(one_path):
    lattice = np.linspace(-1, 1, 5)
    field = spde.value_fields(brownian(bd.TERMINALS["square"]), None, one_path, lattice, [16, 32])
    want = lattice[None, :] ** 2 + field.t_nodes[:, None]
    assert np.all(np.abs(field.u_hat - want) <= 4 * field.se + 1e-12)


def test_zero_gamma_fields_coincide(one_path):
    frame0 = build_frame(GammaSpec.constant(G, 0.0), H)
    field = spde.value_fields(brownian(bd.TERMINALS["square"]), frame0, one_path, [0.0, 0.5], [16, 32])
    assert np.array_equal(field.u, field.u_hat)


def test_zero_driver_field_is_heat_times_epsilon(one_path, frame):
    coeff = spde.coefficient_catalog(G)["heat"]
    lattice = np.array([-0.5, 0.0, 0.5])
    field = spde.value_fields(coeff, frame, one_path, lattice, [16, 32])
    eps = np.exp(log_epsilon(one_path, frame)[0, [16, 32]])
    assert np.allclose(field.eps, eps, rtol=1e-14)
    for a, t in enumerate(field.t_nodes):
        heat = spde.heat_closed_form(coeff, t, lattice)
        assert np.all(np.abs(field.u[a] / (eps[a] * heat) - 1) <= 0.01)


def test_field_requires_single_fbm_path():
    e = sample_ensemble(G, H, 1, 2, 40)
    with pytest.raises(ValueError):
        spde.value_fields(brownian(bd.TERMINALS["identity"]), None, e, [0.0], [8])


def test_field_rows_layout(one_path):
    field = spde.value_fields(brownian(bd.TERMINALS["identity"]), None, one_path, [0.0, 1.0], [8, 16])
    rows = field.rows()
    assert len(rows) == 4 and rows[1][:2] == (G.nodes[8], 1.0)


# -- finite differences ----------------------------------------------------------

def _heat_kernel_oracle(phi, b, sigma, t, x):
    """``E[Phi(x + b t + sigma W_t)]`` by quadrature against the normal density."""
    return integrate.quad(lambda w: phi(x + b * t + sigma * w) * stats.norm.pdf(w, scale=math.sqrt(t)),
                          -12 * math.sqrt(t), 12 * math.sqrt(t))[0]


def test_heat_closed_form_against_quadrature():
    coeff = spde.coefficient_catalog(G)["heat"]
    phi = lambda v: 1.0 + 0.5 * v + 0.25 * v * v
    for t, x in ((0.5, -0.3), (1.0, 0.8)):
        assert spde.heat_closed_form(coeff, t, np.array(x)) == pytest.approx(_heat_kernel_oracle(phi, 0.2, 1.0, t, x),
                                                                               rel=1e-10)


def test_fd_heat_equation_on_201_points():
    coeff = spde.coefficient_catalog(G)["heat"]
    x, fd = spde.solve_pathwise_pde(coeff, None, G, 6.0, [16, 32], n_x=201)
    inner = np.abs(x) <= 2.0
    for a, t in enumerate((0.5, 1.0)):
        want = spde.heat_closed_form(coeff, t, x[inner])
        assert np.max(np.abs(fd[a, inner] - want) / np.abs(want)) <= 1e-3


def test_fd_zero_driver_ignores_the_fbm_path(frame, one_path):
    coeff = spde.coefficient_catalog(G)["heat"]
    le = log_epsilon_transformed(one_path, frame)[0]
    _, with_path = spde.solve_pathwise_pde(coeff, le, G, 5.0, [32], n_x=101)
    _, without = spde.solve_pathwise_pde(coeff, None, G, 5.0, [32], n_x=101)
    assert np.array_equal(with_path, without)


def test_fd_rejects_unstable_step():
    coeff = spde.coefficient_catalog(G)["heat"]
    with pytest.raises(spde.CFLError, match="use dt"):
        spde.solve_pathwise_pde(coeff, None, G, 5.0, [32], n_x=201, dt_fd=0.01)


def test_fd_against_monte_carlo_linear_driver(frame):
    coeff = spde.coefficient_catalog(G)["linear"]
    e = sample_ensemble(G, H, 51, 1, 20_000, antithetic=True)
    rows = spde.pde_crosscheck(coeff, frame, e, [-0.5, 0.0, 0.5], [16, 32])
    assert all(r.passed(0.02, 4.0) for r in rows)


# -- variational Z ------------------------------------------------------------

def test_variational_z_linear_terminal():
    e = sample_ensemble(G, H, 52, 1, 2000)
    st = spde.variational_z(brownian(bd.TERMINALS["identity"]), None, e, 32, 0.3)
    assert np.allclose(st.grad_X, 1.0)
    assert np.allclose(st.Y_var, 1.0, atol=1e-10)
    assert np.allclose(st.z_hat, -1.0, atol=1e-10)
    # regression Z carries the opposite sign; its per-path noise is O(n_w^{-1/2})
    assert abs(st.Z_regression.mean() - 1.0) < 0.01
    assert spde.z_consistency(st) < 0.1


def test_variational_z_square_terminal():
    e = sample_ensemble(G, H, 53, 1, 100_000)
    st = spde.variational_z(brownian(bd.TERMINALS["square"]), None, e, 32, 0.3)
    assert np.sqrt(np.mean((st.z_hat + 2 * st.X[:, 1:]) ** 2)) < 0.05 * np.sqrt(np.mean(st.z_hat ** 2))
    assert spde.z_consistency(st) <= 0.05


def test_singular_flow_detected():
    e = sample_ensemble(G, H, 54, 1, 50)
    collapse = spde.CoefficientSet("collapse", 1, lambda x: -x / G.dt, lambda x: np.ones_like(x),
                                   bd.TERMINALS["identity"], ZERO, 1 / G.dt, 0.0,
                                   lambda x: np.full(x.shape, -1 / G.dt), lambda x: np.zeros_like(x))
    with pytest.raises(spde.SingularFlowError):
        spde.variational_z(collapse, None, e, 8, 0.0)


def test_variational_needs_derivatives():
    e = sample_ensemble(G, H, 55, 1, 50)
    with pytest.raises(ValueError):
        spde.variational_z(spde.coefficient_catalog(G)["plane"], None, e, 8, 0.0)


def test_catalog_spot_checks():
    for coeff in spde.coefficient_catalog(G).values():
        coeff.spot_check()


def test_moment_sweep_bounded():
    e = sample_ensemble(G, H, 56, 1, 5000)
    ratios = spde.moment_sweep(spde.coefficient_catalog(G)["mean_reverting"], e, 32, [0.0, 1.0, 4.0, 16.0])
    assert np.all(np.isfinite(ratios)) and ratios.max() < 10
