"""Seeded path ensembles carrying the fBm driver and the Brownian motion W.

Layout: ``n_b`` fractional paths, each with ``n_w`` Brownian paths nested
under it (paths ``g*n_w .. (g+1)*n_w - 1`` share the fBm path ``g``).  The
fBm noise W0 of group ``g`` comes from RNG row ``g`` of stream 0; the W
increments of path ``p`` come from row ``p`` of streams ``1..d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fbm import kernel_weight_table
from .grid import Hurst, TimeGrid
from .kernels import standard_normals

FBM_STREAM = 0


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    grid: TimeGrid
    hurst: Hurst
    seed: int
    dW0: np.ndarray            # (N, n) fBm driving increments
    B: np.ndarray              # (N, n+1) fBm node values
    dW: np.ndarray             # (N, n, d) Brownian increments, d may be 0
    n_w: int = 1               # Brownian paths per fBm path
    shifts: tuple = field(default=())  # applied (sign, node) shifts, for provenance

    @property
    def n_paths(self) -> int:
        return self.dW0.shape[0]

    @property
    def n_b(self) -> int:
        return self.n_paths // self.n_w

    @property
    def dim_w(self) -> int:
        return self.dW.shape[2]

    @property
    def group(self) -> np.ndarray:
        return np.arange(self.n_paths) // self.n_w

    @property
    def W0(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.grid.n_steps + 1))
        np.cumsum(self.dW0, axis=1, out=out[:, 1:])
        return out

    @property
    def W(self) -> np.ndarray:
        """Brownian node values, shape (N, n+1, d)."""
        out = np.zeros((self.n_paths, self.grid.n_steps + 1, self.dim_w))
        np.cumsum(self.dW, axis=1, out=out[:, 1:])
        return out

    def with_fbm_noise(self, dW0: np.ndarray, shift=None) -> "PathEnsemble":
        """Same Brownian data, new W0 increments; B is re-derived."""
        shifts = self.shifts + ((shift,) if shift is not None else ())
        return replace(self, dW0=dW0, B=fbm_from_noise(dW0, self.grid, self.hurst), shifts=shifts)

    def coarsen(self, factor: int) -> "PathEnsemble":
        """Aggregate increments onto a grid with ``factor`` times fewer cells."""
        grid = self.grid.coarsen(factor)
        n, N = grid.n_steps, self.n_paths
        dW0 = self.dW0.reshape(N, n, factor).sum(axis=2)
        dW = self.dW.reshape(N, n, factor, self.dim_w).sum(axis=2)
        return PathEnsemble(grid, self.hurst, self.seed, dW0, fbm_from_noise(dW0, grid, self.hurst),
                            dW, self.n_w, self.shifts)

    def tile(self, copies: int) -> "PathEnsemble":
        """Stack ``copies`` of the ensemble; copies become separate groups.

        Used to evaluate many initial points against the same noise.
        """
        if self.n_b != 1:
            raise ValueError("tiling is defined for single-fBm-path ensembles")
        rep = (copies, 1)
        return PathEnsemble(self.grid, self.hurst, self.seed, np.tile(self.dW0, rep),
                            np.tile(self.B, rep), np.tile(self.dW, (copies, 1, 1)), self.n_w, self.shifts)

    def select_groups(self, groups) -> "PathEnsemble":
        groups = np.atleast_1d(groups)
        idx = (groups[:, None] * self.n_w + np.arange(self.n_w)[None, :]).ravel()
        return replace(self, dW0=self.dW0[idx], B=self.B[idx], dW=self.dW[idx])


def fbm_from_noise(dW0: np.ndarray, grid: TimeGrid, h: Hurst) -> np.ndarray:
    """``B_{t_j} = sum_i w[j, i] dW0_i`` with cell-averaged kernel weights."""
    table = kernel_weight_table(grid, h)
    return dW0 @ table.T


def _noise(seed, stream, rows, n_cols, dt):
    return standard_normals(seed, stream, rows, n_cols) * np.sqrt(dt)


def sample_fbm(grid: TimeGrid, h: Hurst, seed: int, n_paths: int, first_path: int = 0) -> PathEnsemble:
    """``n_paths`` independent fBm paths (no Brownian component).

    Path ``k`` depends only on ``(seed, first_path + k)``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    rows = np.arange(first_path, first_path + n_paths)
    dW0 = _noise(seed, FBM_STREAM, rows, grid.n_steps, grid.dt)
    return PathEnsemble(grid, h, seed, dW0, fbm_from_noise(dW0, grid, h), np.zeros((n_paths, grid.n_steps, 0)))


def sample_ensemble(grid: TimeGrid, h: Hurst, seed: int, n_b: int, n_w: int, dim_w: int = 1,
                    antithetic: bool = False, first_group: int = 0) -> PathEnsemble:
    """Nested ensemble: ``n_b`` fBm paths times ``n_w`` Brownian paths each.

    With ``antithetic`` the Brownian increments come in sign-flipped pairs
    inside each group (``n_w`` must be even).
    """
    if n_b < 1 or n_w < 1:
        raise ValueError("n_b and n_w must be at least 1")
    if antithetic and n_w % 2:
        raise ValueError("antithetic sampling needs an even n_w")
    n = grid.n_steps
    groups = np.arange(first_group, first_group + n_b)
    dW0 = np.repeat(_noise(seed, FBM_STREAM, groups, n, grid.dt), n_w, axis=0)
    N = n_b * n_w
    dW = np.empty((N, n, dim_w))
    if antithetic:
        half = n_w // 2
        base_rows = (groups[:, None] * half + np.arange(half)[None, :]).ravel()
        for k in range(dim_w):
            z = _noise(seed, 1 + k, base_rows, n, grid.dt).reshape(n_b, half, n)
            dW[:, :, k] = np.stack([z, -z], axis=2).reshape(N, n)
    else:
        rows = np.arange(first_group * n_w, first_group * n_w + N)
        for k in range(dim_w):
            dW[:, :, k] = _noise(seed, 1 + k, rows, n, grid.dt)
    return PathEnsemble(grid, h, seed, dW0, fbm_from_noise(dW0, grid, h), dW, n_w)
