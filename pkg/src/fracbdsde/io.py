"""Flat-file outputs: CSV tables and the run manifest."""

from __future__ import annotations

import csv
import platform
from pathlib import Path

import numpy as np

from . import __version__


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def kernel_weights_rows(table: np.ndarray):
    """``t_index, cell, weight`` for the kernel cell-average table."""
    for j in range(table.shape[0]):
        for i in range(table.shape[1]):
            yield j, i, table[j, i]


def path_rows(ens):
    """``path, t, W0, B`` node values."""
    W0 = ens.W0
    t = ens.grid.nodes
    for p in range(ens.n_paths):
        for j in range(len(t)):
            yield p, t[j], W0[p, j], ens.B[p, j]


def frame_kg_rows(frame):
    t, s = frame.grid.nodes, frame.grid.midpoints
    for j in range(len(t)):
        for i in range(len(s)):
            yield t[j], s[i], frame.kg[j, i]


def frame_drift_rows(frame):
    """``t, drift``: total displacement ``int_0^t K(gamma 1_[0,t])`` of the shift at each node."""
    t = frame.grid.nodes
    for j in range(len(t)):
        yield t[j], frame.drift[j, -1]


def frame_cross_rows(frame):
    t = frame.grid.nodes
    for r in range(len(t)):
        for v in range(len(t)):
            yield t[r], t[v], frame.cross[v, r]


def check_rows(rows, with_diff: bool = False):
    for r in rows:
        if with_diff:
            yield r.functional, r.lhs, r.rhs, r.diff, r.se, r.z
        else:
            yield r.functional, r.lhs, r.rhs, r.se, r.z


def bdsde_rows(sol, grid, limit: int | None = None):
    """``path, t, Yhat, Y, Z`` with Z at node ``t_j`` taken from cell ``j-1``."""
    t = grid.nodes
    n_paths = sol.Yhat.shape[0] if limit is None else min(limit, sol.Yhat.shape[0])
    for p in range(n_paths):
        for j in range(sol.upto + 1):
            Y = np.nan if sol.Y is None else sol.Y[p, j]
            if j == 0:
                Z = np.nan
            else:
                Z = sol.Zhat[p, j - 1, 0] if sol.Z is None else sol.Z[p, j - 1, 0]
            yield p, t[j], sol.Yhat[p, j], Y, Z


def crosscheck_rows(rows):
    for r in rows:
        yield r.t, r.x, r.fd, r.mc, r.se, r.discrepancy


def write_manifest(path: Path, config: dict, checks: list[tuple], wall_clock: float, extra: dict | None = None) -> Path:
    """Plain ``key = value`` manifest followed by one line per check."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"code_version = fracbdsde {__version__}",
             f"python = {platform.python_version()}",
             f"numpy = {np.__version__}",
             f"wall_clock_seconds = {wall_clock:.3f}"]
    for key in sorted(config):
        lines.append(f"config.{key} = {config[key]}")
    for key, value in (extra or {}).items():
        lines.append(f"note.{key} = {value}")
    for name, ok, detail in checks:
        lines.append(f"check {'PASS' if ok else 'FAIL'} {name}: {detail}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
