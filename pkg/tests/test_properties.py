import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fracbdsde import bdsde as bd
from fracbdsde.calculus import frac_integral_left, frac_integral_right
from fracbdsde.config import parse_config, parse_gamma, parse_lattice
from fracbdsde.divergence import divergence_deterministic
from fracbdsde.fbm import covariance_R, op_K, transfer_inner
from fracbdsde.girsanov import GammaSpec, build_frame, log_epsilon, shift_path
from fracbdsde.grid import GridFunction, Hurst, TimeGrid
from fracbdsde.paths import sample_ensemble

G = TimeGrid(1.0, 16)
hursts = st.floats(0.05, 0.45)
times = st.floats(0.0, 2.0)
levels = st.lists(st.floats(-1.0, 1.0), min_size=16, max_size=16)
fast = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@fast
@given(hursts, times, times)
def test_covariance_symmetric_and_bounded(h, t, s):
    hh = Hurst(h)
    r = covariance_R(hh, t, s)
    assert r == covariance_R(hh, s, t)
    assert abs(r) <= math.sqrt(t ** (2 * h) * s ** (2 * h)) * (1 + 1e-12) + 1e-15


@fast
@given(hursts, st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6, unique=True))
def test_covariance_matrix_positive_semidefinite(h, ts):
    hh = Hurst(h)
    t = np.array(ts)
    C = covariance_R(hh, t[:, None], t[None, :])
    assert np.min(np.linalg.eigvalsh(C)) >= -1e-12 * np.max(np.abs(C))


@fast
@given(hursts, levels, levels, st.floats(-3, 3))
def test_op_K_linear(h, a, b, c):
    hh = Hurst(h)
    fa, fb = GridFunction(G, np.array(a), "cell"), GridFunction(G, np.array(b), "cell")
    lhs = op_K(fa * c + fb, hh).values
    rhs = c * op_K(fa, hh).values + op_K(fb, hh).values
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def _steps(jumps, vals):
    out = np.zeros(16)
    for j, v in zip(jumps, vals):
        out[:j] += v
    return GridFunction(G, out, "cell")


few_jumps = st.lists(st.integers(1, 16), min_size=1, max_size=3)
jump_sizes = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3)


@settings(max_examples=10, deadline=None)
@given(hursts, few_jumps, jump_sizes, few_jumps, jump_sizes)
def test_transfer_inner_symmetric(h, ja, va, jb, vb):
    # quadrature route: cost grows with the number of jumps squared
    hh = Hurst(h)
    fa, fb = _steps(ja, va), _steps(jb, vb)
    assert math.isclose(transfer_inner(fa, fb, hh), transfer_inner(fb, fa, hh), rel_tol=1e-10, abs_tol=1e-13)
    assert transfer_inner(fa, fa, hh) >= -1e-13


@fast
@given(st.floats(0.05, 0.95), st.lists(st.floats(-2, 2), min_size=17, max_size=17), st.floats(-2, 2))
def test_fractional_integrals_linear(alpha, vals, c):
    f = GridFunction(G, np.array(vals))
    for op in (frac_integral_left, frac_integral_right):
        lhs = op(f * c, alpha).values
        assert np.allclose(lhs, c * op(f, alpha).values, rtol=1e-10, atol=1e-12)


ENS = sample_ensemble(G, Hurst(0.3), 99, 20, 1)


@fast
@given(levels, st.integers(0, 16))
def test_shift_involution(gamma, node):
    frame = build_frame(GammaSpec(G, np.array(gamma)), Hurst(0.3))
    back = shift_path(shift_path(ENS, frame, node, +1), frame, node, -1)
    assert np.allclose(back.B, ENS.B, rtol=0, atol=1e-13)


@fast
@given(levels)
def test_cross_table_symmetric(gamma):
    frame = build_frame(GammaSpec(G, np.array(gamma)), Hurst(0.3))
    assert np.array_equal(frame.cross, frame.cross.T)
    assert np.all(frame.q >= -1e-15)


@fast
@given(levels, st.integers(1, 16))
def test_epsilon_shift_algebra(gamma, node):
    frame = build_frame(GammaSpec(G, np.array(gamma)), Hurst(0.3))
    base = log_epsilon(ENS, frame)[:, node]
    moved = log_epsilon(shift_path(ENS, frame, node, +1), frame, node)
    assert np.allclose(moved - base, frame.q[node], rtol=0, atol=1e-10)


@fast
@given(levels, levels, st.floats(-2, 2))
def test_divergence_linear(a, b, c):
    fa, fb = GridFunction(G, np.array(a), "cell"), GridFunction(G, np.array(b), "cell")
    lhs = divergence_deterministic(fa * c + fb, ENS)
    rhs = c * divergence_deterministic(fa, ENS) + divergence_deterministic(fb, ENS)
    assert np.allclose(lhs, rhs, atol=1e-12)


@fast
@given(st.dictionaries(st.tuples(st.integers(0, 2)), st.floats(-3, 3), min_size=1))
def test_terminal_gradient_matches_difference(coeffs):
    term = bd.TerminalSpec("poly", coeffs)
    x = np.linspace(-1, 1, 7)[:, None]
    h = 1e-6
    fd = (term(x + h) - term(x - h)) / (2 * h)
    assert np.allclose(term.gradient(x)[:, 0], fd, rtol=1e-6, atol=1e-6)


@fast
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(1, 50))
def test_lattice_round_trip(lo, hi, count):
    pts = parse_lattice(f"{lo!r}:{hi!r}:{count}")
    assert len(pts) == count and pts[0] == lo
    again = parse_lattice(", ".join(repr(float(v)) for v in pts))
    assert np.array_equal(pts, again)


@fast
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4))
def test_gamma_pieces_round_trip(lvls):
    starts = np.arange(len(lvls)) / len(lvls) * 0.8
    text = ", ".join(f"{float(s)!r}:{v!r}" for s, v in zip(starts, lvls))
    spec = parse_gamma(text, TimeGrid(1.0, 40))
    assert set(np.unique(spec.values)) <= set(lvls)
    assert spec.values[0] == lvls[0] and spec.values[-1] == lvls[-1]


@fast
@given(st.floats(0.01, 0.49), st.integers(2, 500), st.integers(1, 10 ** 6), st.integers(0, 2 ** 31))
def test_config_round_trip(h, steps, paths, seed):
    cfg = parse_config({"hurst": repr(h), "steps": str(steps), "paths": str(paths), "seed": str(seed)})
    echoed = {k: str(v) for k, v in cfg.as_dict().items() if v is not None}
    assert parse_config(echoed) == cfg
