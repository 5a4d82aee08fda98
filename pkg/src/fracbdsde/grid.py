"""Uniform time grids, the Hurst parameter and grid-sampled functions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, horizon]`` into ``n_steps`` cells."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError(f"n_steps must be an integer >= 2, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        t.flags.writeable = False
        return t

    @cached_property
    def midpoints(self) -> np.ndarray:
        m = (np.arange(self.n_steps) + 0.5) * self.dt
        m.flags.writeable = False
        return m

    def index_of(self, t: float) -> int:
        """Node index of time ``t``; raises if ``t`` is not a grid node."""
        j = int(round(t / self.dt))
        if j < 0 or j > self.n_steps or abs(j * self.dt - t) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {t} is not a node of {self}")
        return j

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} cells by {factor}")
        return TimeGrid(self.horizon, self.n_steps // factor)


@dataclass(frozen=True)
class Hurst:
    """Hurst index restricted to the rough regime ``0 < h < 1/2``."""

    h: float

    def __post_init__(self):
        if not (0.0 < self.h < 0.5):
            raise ValueError(f"Hurst index must lie in (0, 1/2), got {self.h}")
        object.__setattr__(self, "h", float(self.h))

    @cached_property
    def c_h(self) -> float:
        """Normalising constant of the Volterra kernel."""
        h = self.h
        return float(np.sqrt(2 * h / ((1 - 2 * h) * special.beta(1 - 2 * h, h + 0.5))))

    @property
    def alpha(self) -> float:
        """Order ``1/2 - h`` of the fractional operators in the transfer maps."""
        return 0.5 - self.h


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on a grid, either one per node (``kind='node'``) or per cell."""

    grid: TimeGrid
    values: np.ndarray
    kind: str = "node"

    def __post_init__(self):
        if self.kind not in ("node", "cell"):
            raise ValueError(f"kind must be 'node' or 'cell', got {self.kind!r}")
        v = np.array(self.values, dtype=float)
        expected = self.grid.n_steps + (1 if self.kind == "node" else 0)
        if v.shape != (expected,):
            raise ValueError(f"{self.kind}-based function on {self.grid.n_steps} cells "
                             f"needs {expected} values, got shape {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: TimeGrid, fn, kind: str = "node") -> "GridFunction":
        pts = grid.nodes if kind == "node" else grid.midpoints
        return cls(grid, np.asarray(fn(pts), dtype=float) * np.ones_like(pts), kind)

    @classmethod
    def indicator(cls, grid: TimeGrid, a: float, b: float) -> "GridFunction":
        """Cell-based indicator of ``[a, b]`` (``a`` and ``b`` must be nodes)."""
        i, j = grid.index_of(a), grid.index_of(b)
        v = np.zeros(grid.n_steps)
        v[i:j] = 1.0
        return cls(grid, v, "cell")

    @property
    def points(self) -> np.ndarray:
        return self.grid.nodes if self.kind == "node" else self.grid.midpoints

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_compatible(other)
        return GridFunction(self.grid, self.values + other.values, self.kind)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(c), self.kind)

    __rmul__ = __mul__

    def _check_compatible(self, other: "GridFunction"):
        if other.grid != self.grid or other.kind != self.kind:
            raise ValueError("grid functions live on different grids or layouts")


def l2_grid_norm(values, grid: TimeGrid, skip_right: bool = False, skip_left: bool = False) -> float:
    """Discrete L² norm of node values (trapezoid); endpoints can be skipped.

    Skipped endpoints are where one-sided fractional derivatives blow up.
    """
    v = np.asarray(values, dtype=float)
    w = np.full(v.shape, grid.dt)
    w[0] = w[-1] = grid.dt / 2
    if skip_left:
        w[0] = 0.0
        v = v.copy()
        v[0] = 0.0
    if skip_right:
        w[-1] = 0.0
        v = v.copy()
        v[-1] = 0.0
    return float(np.sqrt(np.sum(w * v * v)))
