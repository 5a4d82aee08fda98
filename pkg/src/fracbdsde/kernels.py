"""Hot loops, each with a numba kernel and a pure-numpy twin.

The public wrappers dispatch on :func:`fracbdsde._backend.use_numba`; both
variants compute the same quantity and are cross-checked in the tests and
timed in ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import math

import numpy as np

from ._backend import jit, prange, use_numba

# ---------------------------------------------------------------------------
# Philox4x64-10 counter-based generator
# ---------------------------------------------------------------------------

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
_PHILOX_M1 = np.uint64(0xCA5A826395121157)
_PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
_PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


def _mulhilo_np(a, b):
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _M32) + lo_hi
    hi = a_hi * b_hi + (hi_lo >> _S32) + (cross >> _S32)
    lo = (cross << _S32) | (lo_lo & _M32)
    return hi, lo


def philox4x64_numpy(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on uint64 arrays; returns the four output words."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64).copy() for c in (c0, c1, c2, c3))
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    with np.errstate(over="ignore"):
        for r in range(10):
            if r:
                k0 = np.uint64(k0 + _PHILOX_W0)
                k1 = np.uint64(k1 + _PHILOX_W1)
            hi0, lo0 = _mulhilo_np(_PHILOX_M0, c0)
            hi1, lo1 = _mulhilo_np(_PHILOX_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@jit(cache=True)
def _mulhilo_nb(a, b):
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _M32) + lo_hi
    hi = a_hi * b_hi + (hi_lo >> _S32) + (cross >> _S32)
    lo = (cross << _S32) | (lo_lo & _M32)
    return hi, lo


@jit(cache=True)
def _philox_block_nb(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = k0 + _PHILOX_W0
            k1 = k1 + _PHILOX_W1
        hi0, lo0 = _mulhilo_nb(_PHILOX_M0, c0)
        hi1, lo1 = _mulhilo_nb(_PHILOX_M1, c2)
        n0 = hi1 ^ c1 ^ k0
        n2 = hi0 ^ c3 ^ k1
        c0 = n0
        c1 = lo1
        c2 = n2
        c3 = lo0
    return c0, c1, c2, c3


@jit(parallel=True, cache=True)
def _normals_nb(seed, stream, rows, n_cols, out):
    n_blocks = (n_cols + 3) // 4
    k0 = np.uint64(seed)
    k1 = np.uint64(0)
    c2 = np.uint64(stream)
    c3 = np.uint64(0)
    for p in prange(rows.shape[0]):
        c1 = np.uint64(rows[p])
        for b in range(n_blocks):
            x0, x1, x2, x3 = _philox_block_nb(np.uint64(b), c1, c2, c3, k0, k1)
            u1 = ((x0 >> _S11) + _ONE) * _INV53
            u2 = (x1 >> _S11) * _INV53
            u3 = ((x2 >> _S11) + _ONE) * _INV53
            u4 = (x3 >> _S11) * _INV53
            r1 = math.sqrt(-2.0 * math.log(u1))
            r2 = math.sqrt(-2.0 * math.log(u3))
            z = (r1 * math.cos(_TWO_PI * u2), r1 * math.sin(_TWO_PI * u2),
                 r2 * math.cos(_TWO_PI * u4), r2 * math.sin(_TWO_PI * u4))
            base = 4 * b
            for lane in range(4):
                col = base + lane
                if col < n_cols:
                    out[p, col] = z[lane]


def _normals_np(seed, stream, rows, n_cols):
    n_blocks = (n_cols + 3) // 4
    blk, row = np.meshgrid(np.arange(n_blocks, dtype=np.uint64), rows.astype(np.uint64), indexing="xy")
    zeros = np.zeros_like(blk)
    x0, x1, x2, x3 = philox4x64_numpy(blk, row, zeros + np.uint64(stream), zeros, seed, 0)
    u1 = ((x0 >> _S11) + _ONE) * _INV53
    u2 = (x1 >> _S11) * _INV53
    u3 = ((x2 >> _S11) + _ONE) * _INV53
    u4 = (x3 >> _S11) * _INV53
    r1 = np.sqrt(-2.0 * np.log(u1))
    r2 = np.sqrt(-2.0 * np.log(u3))
    z = np.stack([r1 * np.cos(_TWO_PI * u2), r1 * np.sin(_TWO_PI * u2),
                  r2 * np.cos(_TWO_PI * u4), r2 * np.sin(_TWO_PI * u4)], axis=-1)
    return z.reshape(len(rows), 4 * n_blocks)[:, :n_cols]


def standard_normals(seed: int, stream: int, rows, n_cols: int) -> np.ndarray:
    """Standard normals indexed by (seed, stream, row, column).

    Row ``r`` of the output depends only on ``(seed, stream, rows[r])``, so any
    subset or chunking of rows reproduces the same numbers.
    """
    rows = np.ascontiguousarray(rows, dtype=np.uint64)
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    if use_numba():
        out = np.empty((rows.shape[0], n_cols))
        _normals_nb(np.uint64(seed), np.uint64(stream), rows, n_cols, out)
        return out
    return np.ascontiguousarray(_normals_np(seed, stream, rows, n_cols))


# ---------------------------------------------------------------------------
# Product integration for right-sided fractional operators
# ---------------------------------------------------------------------------
# f is the piecewise-linear interpolant of node values on a uniform grid with
# step dt and n cells.  Points may sit anywhere in [0, T].


def _locate(points, dt, n):
    # a point a rounding error below a node belongs to the cell starting there;
    # plain floor would leave a zero-width first piece and a 0 * inf term
    q = points / dt
    r = np.rint(q)
    cell = np.where(np.abs(q - r) <= 1e-9 * np.maximum(1.0, r), r, np.floor(q)).astype(np.int64)
    return np.clip(cell, 0, n - 1)


@jit(cache=True)
def _locate_nb(x, dt, n):
    q = x / dt
    r = math.floor(q + 0.5)
    cell = int(r) if abs(q - r) <= 1e-9 * max(1.0, r) else int(math.floor(q))
    return min(max(cell, 0), n - 1)


@jit(cache=True)
def _right_integral_nb(values, dt, alpha, points, out):
    n = values.shape[0] - 1
    T = n * dt
    for p in range(points.shape[0]):
        x = points[p]
        m = _locate_nb(x, dt, n)
        slope = (values[m + 1] - values[m]) / dt
        fx = values[m] + slope * (x - m * dt)
        b = (m + 1) * dt - x
        acc = 0.0
        if b > 0.0:
            acc = fx * b ** alpha / alpha + slope * b ** (alpha + 1.0) / (alpha + 1.0)
        for i in range(m + 1, n):
            s = (values[i + 1] - values[i]) / dt
            a = i * dt - x
            bb = (i + 1) * dt - x
            acc += (values[i] - s * a) * (bb ** alpha - a ** alpha) / alpha
            acc += s * (bb ** (alpha + 1.0) - a ** (alpha + 1.0)) / (alpha + 1.0)
        if x >= T:
            acc = 0.0
        out[p] = acc


def _right_integral_np(values, dt, alpha, points):
    n = values.shape[0] - 1
    T = n * dt
    m = _locate(points, dt, n)
    slopes = np.diff(values) / dt
    fx = values[m] + slopes[m] * (points - m * dt)
    b = np.maximum((m + 1) * dt - points, 0.0)
    partial = fx * b ** alpha / alpha + slopes[m] * b ** (alpha + 1.0) / (alpha + 1.0)
    i = np.arange(n)
    a = i[None, :] * dt - points[:, None]
    bb = a + dt
    mask = i[None, :] > m[:, None]
    a = np.where(mask, a, 0.0)
    bb = np.where(mask, bb, 0.0)
    terms = (values[:-1] - slopes * a) * (bb ** alpha - a ** alpha) / alpha
    terms += slopes * (bb ** (alpha + 1.0) - a ** (alpha + 1.0)) / (alpha + 1.0)
    out = partial + np.where(mask, terms, 0.0).sum(axis=1)
    return np.where(points >= T, 0.0, out)


@jit(cache=True)
def _right_marchaud_nb(values, dt, alpha, points, out):
    n = values.shape[0] - 1
    T = n * dt
    for p in range(points.shape[0]):
        s = points[p]
        if s >= T:
            out[p] = np.nan
            continue
        m = _locate_nb(s, dt, n)
        slope = (values[m + 1] - values[m]) / dt
        fs = values[m] + slope * (s - m * dt)
        h = (m + 1) * dt - s
        acc = -slope * h ** (1.0 - alpha) / (1.0 - alpha)
        for i in range(m + 1, n):
            sl = (values[i + 1] - values[i]) / dt
            a = i * dt - s
            b = a + dt
            c0 = fs - values[i] + sl * a
            acc += c0 * (a ** (-alpha) - b ** (-alpha)) / alpha
            acc -= sl * (b ** (1.0 - alpha) - a ** (1.0 - alpha)) / (1.0 - alpha)
        out[p] = fs / (T - s) ** alpha + alpha * acc


def _right_marchaud_np(values, dt, alpha, points):
    n = values.shape[0] - 1
    T = n * dt
    inside = points < T
    pts = np.where(inside, points, 0.0)
    m = _locate(pts, dt, n)
    slopes = np.diff(values) / dt
    fs = values[m] + slopes[m] * (pts - m * dt)
    h = (m + 1) * dt - pts
    acc = -slopes[m] * h ** (1.0 - alpha) / (1.0 - alpha)
    i = np.arange(n)
    mask = i[None, :] > m[:, None]
    a = np.where(mask, i[None, :] * dt - pts[:, None], 1.0)
    b = a + dt
    c0 = fs[:, None] - values[None, :-1] + slopes[None, :] * a
    terms = c0 * (a ** (-alpha) - b ** (-alpha)) / alpha
    terms -= slopes[None, :] * (b ** (1.0 - alpha) - a ** (1.0 - alpha)) / (1.0 - alpha)
    acc = acc + np.where(mask, terms, 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = fs / (T - pts) ** alpha + alpha * acc
    return np.where(inside, out, np.nan)


def right_integral_sum(values, dt, alpha, points) -> np.ndarray:
    """Γ(α)·I^α_{T-} of the piecewise-linear interpolant, at ``points``."""
    values = np.ascontiguousarray(values, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    if use_numba():
        out = np.empty(points.shape[0])
        _right_integral_nb(values, float(dt), float(alpha), points, out)
        return out
    return _right_integral_np(values, float(dt), float(alpha), points)


def right_marchaud_sum(values, dt, alpha, points) -> np.ndarray:
    """Γ(1-α)·D^α_{T-} of the piecewise-linear interpolant, at ``points``.

    Points at the right end of the interval return NaN.
    """
    values = np.ascontiguousarray(values, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    if use_numba():
        out = np.empty(points.shape[0])
        _right_marchaud_nb(values, float(dt), float(alpha), points, out)
        return out
    return _right_marchaud_np(values, float(dt), float(alpha), points)


# ---------------------------------------------------------------------------
# Heun sweeps for the conjugated pathwise ODE
# ---------------------------------------------------------------------------
# zeta' = b(e zeta, Bv) / e with the parametric drift
# b(x, Bv) = c0 + c1 x + c2 sin x + c3 cos Bv.  Inside a cell log e and Bv are
# interpolated linearly; ``sub`` Heun steps are taken per cell.


@jit(cache=True)
def _conj_drift_nb(z, e, cb, c0, c1, c2, c3):
    # cb is cos(B) already evaluated; skip terms that are switched off
    x = e * z
    acc = c0 + c1 * x
    if c2 != 0.0:
        acc += c2 * math.sin(x)
    if c3 != 0.0:
        acc += c3 * cb
    return acc / e


@jit(cache=True)
def _heun_cell_nb(z, le0, le1, e0, e1, b0, b1, cb0, cb1, dt, sub, c0, c1, c2, c3):
    h = dt / sub
    ea = e0
    ca = cb0
    for k in range(sub):
        if k + 1 == sub:
            eb = e1
            cbb = cb1
        else:
            w1 = (k + 1) / sub
            eb = math.exp(le0 + (le1 - le0) * w1)
            cbb = math.cos(b0 + (b1 - b0) * w1) if c3 != 0.0 else 0.0
        k1 = _conj_drift_nb(z, ea, ca, c0, c1, c2, c3)
        k2 = _conj_drift_nb(z + h * k1, eb, cbb, c0, c1, c2, c3)
        z = z + 0.5 * h * (k1 + k2)
        ea = eb
        ca = cbb
    return z


@jit(parallel=True, cache=True)
def _zeta_trajectory_nb(log_e, bvals, x0, params, sub, dt, out):
    N, m = log_e.shape
    c0, c1, c2, c3 = params[0], params[1], params[2], params[3]
    for p in prange(N):
        z = x0[p]
        out[p, 0] = z
        le0 = log_e[p, 0]
        e0 = math.exp(le0)
        cb0 = math.cos(bvals[p, 0])
        for i in range(m - 1):
            le1 = log_e[p, i + 1]
            e1 = math.exp(le1)
            cb1 = math.cos(bvals[p, i + 1])
            z = _heun_cell_nb(z, le0, le1, e0, e1, bvals[p, i], bvals[p, i + 1], cb0, cb1,
                              dt, sub, c0, c1, c2, c3)
            out[p, i + 1] = z
            le0, e0, cb0 = le1, e1, cb1


@jit(parallel=True, cache=True)
def _anticipating_sweep_nb(log_e, bvals, cross, boff, xi, params, sub, dt, out):
    N, m = log_e.shape
    c0, c1, c2, c3 = params[0], params[1], params[2], params[3]
    for p in prange(N):
        out[p, 0] = xi[p, 0]
        for j in range(1, m):
            z = xi[p, j]
            le0 = log_e[p, 0] - cross[0, j]
            e0 = math.exp(le0)
            b0 = bvals[p, 0] + boff[0, 0] - boff[0, j]
            cb0 = math.cos(b0) if c3 != 0.0 else 0.0
            for i in range(j):
                le1 = log_e[p, i + 1] - cross[i + 1, j]
                e1 = math.exp(le1)
                b1 = bvals[p, i + 1] + boff[i + 1, i + 1] - boff[i + 1, j]
                cb1 = math.cos(b1) if c3 != 0.0 else 0.0
                z = _heun_cell_nb(z, le0, le1, e0, e1, b0, b1, cb0, cb1, dt, sub, c0, c1, c2, c3)
                le0, e0, b0, cb0 = le1, e1, b1, cb1
            out[p, j] = z


def _zeta_trajectory_np(log_e, bvals, x0, drift, sub, dt, upto=None):
    """Vectorised over paths; ``drift(t, z, e, bv)`` is the conjugated right-hand side."""
    m = log_e.shape[1] if upto is None else upto + 1
    out = np.empty((log_e.shape[0], m))
    z = np.array(x0, dtype=float)
    out[:, 0] = z
    h = dt / sub
    for i in range(m - 1):
        dle = log_e[:, i + 1] - log_e[:, i]
        db = bvals[:, i + 1] - bvals[:, i]
        for k in range(sub):
            w0, w1 = k / sub, (k + 1) / sub
            ea = np.exp(log_e[:, i] + dle * w0)
            eb = np.exp(log_e[:, i] + dle * w1)
            t0 = (i + w0) * dt
            k1 = drift(t0, z, ea, bvals[:, i] + db * w0)
            k2 = drift(t0 + h, z + h * k1, eb, bvals[:, i] + db * w1)
            z = z + 0.5 * h * (k1 + k2)
        out[:, i + 1] = z
    return out


def parametric_conjugated_drift(params):
    c0, c1, c2, c3 = (float(c) for c in params)

    def drift(t, z, e, bv):
        x = e * z
        return (c0 + c1 * x + c2 * np.sin(x) + c3 * np.cos(bv)) / e

    return drift


def zeta_trajectory(log_e, bvals, x0, dt, sub=1, params=None, drift=None) -> np.ndarray:
    """Heun solution of the conjugated ODE at every node, shape (N, n+1).

    Either ``params`` (parametric drift, compiled when numba is active) or a
    vectorised ``drift(t, z, e, bv)`` must be given.
    """
    log_e = np.ascontiguousarray(log_e, dtype=float)
    bvals = np.ascontiguousarray(bvals, dtype=float)
    x0 = np.ascontiguousarray(np.broadcast_to(x0, log_e.shape[:1]), dtype=float)
    if params is not None and use_numba():
        out = np.empty_like(log_e)
        _zeta_trajectory_nb(log_e, bvals, x0, np.asarray(params, dtype=float), int(sub), float(dt), out)
        return out
    if drift is None:
        drift = parametric_conjugated_drift(params)
    return _zeta_trajectory_np(log_e, bvals, x0, drift, int(sub), float(dt))


def anticipating_sweep(log_e, bvals, cross, boff, xi, dt, sub=1, params=None, drift=None) -> np.ndarray:
    """For every node ``t_j`` solve the ODE on ``A_{t_j}``-composed data up to ``t_j``.

    ``log_e`` holds ``log eps_s(T_s)`` and ``bvals`` the B node values of the
    base paths; ``xi[:, j]`` is the initial value composed with ``A_{t_j}``.
    Returns ``zeta_{t_j}`` in column ``j``.
    """
    log_e = np.ascontiguousarray(log_e, dtype=float)
    bvals = np.ascontiguousarray(bvals, dtype=float)
    xi = np.ascontiguousarray(xi, dtype=float)
    cross = np.ascontiguousarray(cross, dtype=float)
    boff = np.ascontiguousarray(boff, dtype=float)
    if params is not None and use_numba():
        out = np.empty_like(log_e)
        _anticipating_sweep_nb(log_e, bvals, cross, boff, xi, np.asarray(params, dtype=float),
                               int(sub), float(dt), out)
        return out
    if drift is None:
        drift = parametric_conjugated_drift(params)
    out = np.empty_like(log_e)
    out[:, 0] = xi[:, 0]
    diag = np.diag(boff)
    for j in range(1, log_e.shape[1]):
        le = log_e[:, :j + 1] - cross[:j + 1, j]
        bv = bvals[:, :j + 1] + diag[:j + 1] - boff[:j + 1, j]
        out[:, j] = _zeta_trajectory_np(le, bv, xi[:, j], drift, int(sub), float(dt))[:, -1]
    return out
