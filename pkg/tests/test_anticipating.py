import numpy as np
import pytest

from fracbdsde.acceptance import classical_heun
from fracbdsde.anticipating import (DRIFTS, BlowUpError, DriftSpec, heun_self_convergence, residual_duality_check,
                                    solution_table, solve_anticipating, solve_zeta)
from fracbdsde.functionals import b_power, duality_family
from fracbdsde.girsanov import GammaSpec, build_frame, log_epsilon_transformed, shift_path
from fracbdsde.grid import Hurst, TimeGrid
from fracbdsde.paths import sample_ensemble

import oracles

H = Hurst(0.3)
G = TimeGrid(1.0, 32)


@pytest.fixture(scope="module")
def frame():
    return build_frame(GammaSpec.pieces(G, [0.0, 0.5], [0.6, 0.2]), H)


@pytest.fixture(scope="module")
def ens():
    return sample_ensemble(G, H, 31, 500, 1)


def test_zero_drift_keeps_initial_value(frame, ens):
    assert np.all(solve_zeta(ens, frame, DRIFTS["zero"], 0.7) == 0.7)


@pytest.fixture(scope="module")
def fine():
    # Heun's global error for lambda x is lambda^3 h^2 T / 6: 64 cells x 32 substeps keeps it at 5e-9
    g = TimeGrid(1.0, 64)
    return g, build_frame(GammaSpec.pieces(g, [0.0, 0.5], [0.6, 0.2]), H), sample_ensemble(g, H, 32, 200, 1)


def test_linear_drift_zeta_is_exponential(fine):
    g, frame, e = fine
    zeta = solve_zeta(e, frame, DRIFTS["linear"], 2.0, substeps=32)
    assert np.max(np.abs(zeta / (2.0 * np.exp(0.5 * g.nodes)) - 1)) <= 1e-8


def test_unit_drift_against_trapezoid(frame, ens):
    zeta = solve_zeta(ens, frame, DRIFTS["one"], 0.3)
    inv = np.exp(-log_epsilon_transformed(ens, frame))
    trap = 0.3 + np.concatenate([np.zeros((ens.n_paths, 1)),
                                 np.cumsum(0.5 * G.dt * (inv[:, 1:] + inv[:, :-1]), axis=1)], axis=1)
    assert np.max(np.abs(zeta - trap)) <= 1e-8


def test_zero_drift_solution_is_scaled_exponential(frame, ens):
    sol = solve_anticipating(ens, frame, DRIFTS["zero"], 1.5)
    assert np.allclose(sol.X, 1.5 * np.exp(sol.log_eps), rtol=1e-14)


def test_linear_drift_solution_closed_form(fine):
    g, frame, e = fine
    sol = solve_anticipating(e, frame, DRIFTS["linear"], 1.5, substeps=32)
    assert np.max(np.abs(sol.X / (1.5 * np.exp(0.5 * g.nodes + sol.log_eps)) - 1)) <= 1e-8


def test_gamma_zero_matches_plain_ode_oracle(ens):
    frame0 = build_frame(GammaSpec.constant(G, 0.0), H)
    drift = DriftSpec("sin", lambda t, x, bv: 0.5 * np.sin(x) - 0.2 * x + t, 0.7, 1.0)
    sol = solve_anticipating(ens, frame0, drift, 0.4, substeps=2)
    ref = oracles.heun_ode(lambda t, x: 0.5 * np.sin(x) - 0.2 * x + t, 0.4, 1.0, 64)[::2]
    assert np.max(np.abs(sol.X - ref)) <= 1e-12


def test_gamma_zero_parametric_matches_direct_heun(ens):
    frame0 = build_frame(GammaSpec.constant(G, 0.0), H)
    xi = b_power(G, 0.5, 1)
    sol = solve_anticipating(ens, frame0, DRIFTS["mixed"], xi, substeps=3)
    ref = classical_heun(DRIFTS["mixed"], ens.B, xi.evaluate(ens), G.dt, 3)
    assert np.allclose(sol.X, ref, rtol=1e-12, atol=1e-13)


def test_conjugation_consistency(frame, ens):
    xi = b_power(G, 0.5, 1)
    zeta = solve_zeta(ens, frame, DRIFTS["mixed"], xi)
    let = log_epsilon_transformed(ens, frame)
    for k in (8, 16, 32):
        X_T = solve_anticipating(shift_path(ens, frame, k, +1), frame, DRIFTS["mixed"], xi).X[:, k]
        assert np.max(np.abs(X_T * np.exp(-let[:, k]) / zeta[:, k] - 1)) <= 1e-8


def test_heun_order_two(frame, ens):
    order = heun_self_convergence(ens, frame, DRIFTS["mixed"], b_power(G, 0.5, 1))
    assert 1.7 <= order <= 2.3


def test_second_moments_stable_under_doubling(frame):
    e = sample_ensemble(G, H, 2, 20_000, 1)
    sol = solve_anticipating(e, frame, DRIFTS["mixed"], 1.0)
    full = sol.second_moments()
    half = np.mean(sol.X[:10_000] ** 2, axis=0)
    assert np.all(np.isfinite(full))
    assert 0.8 <= full.max() / half.max() <= 1.25


def test_residual_duality(frame):
    e = sample_ensemble(G, H, 5, 100_000, 1)
    sol = solve_anticipating(e, frame, DRIFTS["mixed"], b_power(G, 0.5, 1))
    rows = residual_duality_check(sol, e, frame, DRIFTS["mixed"], duality_family(G))
    assert rows[0].lhs == 0.0
    assert all(abs(r.z) < 4 for r in rows)


def test_blow_up_is_diagnosed(ens):
    wild = DriftSpec("wild", lambda t, x, bv: x ** 3 + 50.0, 1e9, 1e9)
    with pytest.raises(BlowUpError), np.errstate(over="ignore", invalid="ignore"):
        solve_zeta(ens, build_frame(GammaSpec.constant(G, 0.0), H), wild, 10.0)


def test_spot_check_catches_false_envelope():
    with pytest.raises(ValueError):
        DriftSpec("liar", lambda t, x, bv: 3.0 * x, 1.0, 0.0).spot_check()
    DRIFTS["mixed"].spot_check()


def test_solution_table_layout(frame, ens):
    small = ens.select_groups(np.arange(2))
    rows = solution_table(solve_anticipating(small, frame, DRIFTS["zero"], 1.0), small)
    assert len(rows) == 2 * 33
    p, t, X, zeta, e = rows[5]
    assert p == 0 and t == G.nodes[5] and X == pytest.approx(zeta * e)
