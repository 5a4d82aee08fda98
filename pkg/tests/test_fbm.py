import numpy as np
import pytest
from scipy import stats

from fracbdsde.fbm import (covariance_R, kernel_inner, kernel_K_H, kernel_values, kernel_weight_table, lambda_inner,
                           op_K, op_K_star, transfer_inner)
from fracbdsde.grid import GridFunction, Hurst, TimeGrid
from fracbdsde.paths import sample_ensemble, sample_fbm

import oracles

H = Hurst(0.3)


@pytest.mark.parametrize("h", [0.1, 0.25, 0.3, 0.4])
@pytest.mark.parametrize("t,s", [(1.0, 0.5), (1.0, 0.02), (0.6, 0.59), (0.3, 0.1)])
def test_kernel_matches_defining_formula(h, t, s):
    assert kernel_K_H(Hurst(h), t, s) == pytest.approx(oracles.kernel(h, t, s), rel=1e-10)


def test_vectorised_kernel_agrees_with_scalar():
    s = np.linspace(0.01, 0.99, 17)
    got = kernel_values(H, 1.0, s)
    want = [kernel_K_H(H, 1.0, v) for v in s]
    assert np.allclose(got, want, rtol=1e-10)


@pytest.mark.parametrize("t,s", [(0.5, 0.5), (0.5, 0.7), (0.5, 0.0), (0.5, -0.1)])
def test_kernel_domain(t, s):
    with pytest.raises(ValueError):
        kernel_K_H(H, t, s)


@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_variance_identity(t):
    assert abs(kernel_inner(H, t, t, adaptive_kernel=True) - t ** 0.6) <= 1e-4


@pytest.mark.parametrize("t,r", [(0.75, 0.5), (1.0, 0.25)])
def test_covariance_identity(t, r):
    assert kernel_inner(H, t, r) == pytest.approx(oracles.covariance(0.3, t, r), rel=1e-6)
    assert oracles.kernel_product_integral(0.3, t, r) == pytest.approx(covariance_R(H, t, r), rel=1e-6)


@pytest.mark.parametrize("h", [0.1, 0.3, 0.4])
def test_covariance_trivial_values(h):
    hh = Hurst(h)
    assert covariance_R(hh, 1.0, 0.5) == pytest.approx(0.5, abs=1e-15)
    assert covariance_R(hh, 0.7, 0.7) == pytest.approx(0.7 ** (2 * h), rel=1e-15)
    assert covariance_R(hh, 0.7, 0.0) == 0.0


# -- transfer operators --------------------------------------------------------

@pytest.fixture(scope="module")
def g1024():
    return TimeGrid(1.0, 1024)


def test_op_K_indicator_is_kernel_column():
    g = TimeGrid(1.0, 64)
    phi = GridFunction.indicator(g, 0.0, 0.5)
    got = op_K(phi, H, at="midpoints").values
    mids = g.midpoints
    want = np.where(mids < 0.5, [kernel_K_H(H, 0.5, m) if m < 0.5 else 0.0 for m in mids], 0.0)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-14)


def test_op_K_zero(g1024):
    assert not np.any(op_K(GridFunction(g1024, np.zeros(1024), "cell"), H).values)


def test_op_K_exact_and_quadrature_agree_inside():
    g = TimeGrid(1.0, 128)
    phi = GridFunction.indicator(g, 0.0, 0.75)
    exact = op_K(phi, H, at="midpoints").values
    quad = op_K(phi, H, method="quadrature").values
    mids = g.midpoints
    interior = (mids > 0.1) & (np.abs(mids - 0.75) > 0.1)
    assert np.allclose(exact[interior], quad[interior], rtol=2e-2)


def test_op_K_rejects_node_input_on_exact_path():
    g = TimeGrid(1.0, 16)
    with pytest.raises(ValueError):
        op_K(GridFunction(g, np.ones(17)), H)


def test_isometry_example(g1024):
    """``<K 1_[0,.75], K 1_[0,.5]> = R_H(.75, .5)`` within 1e-3 at H = 0.3."""
    a = GridFunction.indicator(g1024, 0.0, 0.75)
    b = GridFunction.indicator(g1024, 0.0, 0.5)
    assert transfer_inner(a, b, H) == pytest.approx(oracles.covariance(0.3, 0.75, 0.5), rel=1e-3)


def test_lambda_inner_is_covariance_form(g1024):
    a = GridFunction.indicator(g1024, 0.0, 0.75) * 2.0 + GridFunction.indicator(g1024, 0.0, 0.25) * -1.0
    want = (4 * oracles.covariance(0.3, 0.75, 0.75) - 4 * oracles.covariance(0.3, 0.75, 0.25)
            + oracles.covariance(0.3, 0.25, 0.25))
    assert lambda_inner(a, a, H) == pytest.approx(want, rel=1e-12)


def test_adjointness_example(g1024):
    g = GridFunction.from_callable(g1024, lambda s: s)
    phi = GridFunction.indicator(g1024, 0.0, 0.5)
    lhs = g1024.dt * np.dot(op_K_star(g, H).values, phi.values)
    rhs = g1024.dt * np.dot(g1024.midpoints, op_K(phi, H).values)
    assert lhs == pytest.approx(rhs, rel=1e-3)


def test_op_K_star_zero(g1024):
    assert not np.any(op_K_star(GridFunction(g1024, np.zeros(1025)), H).values)


# -- sampler -------------------------------------------------------------------

def test_weights_reproduce_sampled_paths():
    g = TimeGrid(1.0, 32)
    ens = sample_fbm(g, H, 5, 10)
    assert np.array_equal(ens.B, ens.dW0 @ kernel_weight_table(g, H).T)
    assert np.all(ens.B[:, 0] == 0) and np.all(ens.W0[:, 0] == 0)


def test_sampling_is_deterministic_per_path():
    g = TimeGrid(1.0, 32)
    full = sample_fbm(g, H, 11, 50)
    part = sample_fbm(g, H, 11, 10, first_path=20)
    # the driving noise is keyed by path index; B goes through one BLAS product,
    # whose blocking depends on the batch size, so chunks agree to rounding
    assert np.array_equal(full.dW0[20:30], part.dW0)
    assert np.allclose(full.B[20:30], part.B, rtol=0, atol=1e-14)
    again = sample_fbm(g, H, 11, 50)
    assert np.array_equal(again.B, full.B) and np.array_equal(again.dW0, full.dW0)


def test_increment_variance_is_step():
    g = TimeGrid(1.0, 16)
    ens = sample_fbm(g, H, 3, 40_000)
    var = ens.dW0.var(axis=0)
    se = g.dt * np.sqrt(2 / 40_000)
    assert np.all(np.abs(var - g.dt) < 5 * se)


def test_law_against_cholesky_oracle():
    """Two-sample comparison at coarse nodes of a 512-step grid."""
    g = TimeGrid(1.0, 512)
    ens = sample_fbm(g, H, 21, 20_000)
    times = np.array([0.25, 0.5, 1.0])
    ours = ens.B[:, [g.index_of(t) for t in times]]
    ref = oracles.cholesky_fbm(0.3, times, 20_000, 7)
    for k in range(3):
        assert stats.ks_2samp(ours[:, k], ref[:, k]).pvalue > 1e-3
    z = (np.mean(ours[:, 1] * ours[:, 2]) - 0.5) / (np.std(ours[:, 1] * ours[:, 2]) / np.sqrt(20_000))
    assert abs(z) < 4


def test_gaussian_marginals():
    g = TimeGrid(1.0, 64)
    ens = sample_fbm(g, H, 4, 100_000)
    n = ens.n_paths
    for j in (16, 32, 64):
        x = ens.B[:, j]
        assert abs(stats.skew(x)) < 5 * np.sqrt(6 / n)
        assert abs(stats.kurtosis(x)) < 5 * np.sqrt(24 / n)


def test_antithetic_pairs_flip_brownian_only():
    g = TimeGrid(1.0, 8)
    ens = sample_ensemble(g, H, 1, 3, 4, antithetic=True)
    dW = ens.dW.reshape(3, 2, 2, 8)
    assert np.array_equal(dW[:, 0], -dW[:, 1]) or np.array_equal(dW[:, :, 0], -dW[:, :, 1])
    assert np.array_equal(ens.B[0], ens.B[3])
