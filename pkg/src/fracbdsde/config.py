"""Run configuration: ``key = value`` files with command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .girsanov import GammaSpec
from .grid import Hurst, TimeGrid

SUBCOMMANDS = ("fbm", "girsanov", "duality", "sde", "bdsde", "spde", "all")

DRIVER_IDS = ("zero", "linear", "decay", "growth", "decay_plus", "nonlinear")
TERMINAL_IDS = ("one", "identity", "square", "affine_square")
COEFFICIENT_IDS = ("brownian_identity", "brownian_square", "heat", "linear", "mean_reverting", "plane")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    subcommand: str = "all"
    hurst: float = 0.3
    horizon: float = 1.0
    steps: int = 64
    paths: int = 100_000
    seed: int = 42
    gamma: str = "0.5"
    driver: str = "linear"
    terminal: str = "affine_square"
    coefficients: str = "linear"
    basis_degree: int = 2
    lattice: str = "-1.5:1.5:7"
    c_hp: float = 1.0
    export_paths: int = 100
    out: str | None = None

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps)

    @property
    def h(self) -> Hurst:
        return Hurst(self.hurst)

    def gamma_spec(self, grid: TimeGrid | None = None) -> GammaSpec:
        return parse_gamma(self.gamma, grid or self.grid)

    def lattice_points(self) -> np.ndarray:
        return parse_lattice(self.lattice)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_CASTS = {f.name: f.type for f in fields(RunConfig)}
KEYS = tuple(_CASTS)
_NUMERIC = {"hurst": float, "horizon": float, "steps": int, "paths": int, "seed": int,
            "basis_degree": int, "c_hp": float, "export_paths": int}


def parse_gamma(text: str, grid: TimeGrid) -> GammaSpec:
    """``"c"`` for a constant, or ``"t0:level, t1:level, ..."`` pieces starting at ``t0 = 0``."""
    text = text.strip()
    if ":" not in text:
        return GammaSpec.constant(grid, float(text))
    breaks, levels = [], []
    for piece in text.split(","):
        start, level = piece.split(":")
        breaks.append(float(start))
        levels.append(float(level))
    if breaks[0] != 0.0 or np.any(np.diff(breaks) <= 0) or breaks[-1] >= grid.horizon:
        raise ValueError("gamma pieces need increasing starts beginning at 0 and inside the horizon")
    return GammaSpec.pieces(grid, breaks, levels)


def parse_lattice(text: str) -> np.ndarray:
    """``"lo:hi:count"`` evenly spaced points, or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        lo, hi, count = text.split(":")
        count = int(count)
        if count < 1:
            raise ValueError("lattice needs at least one point")
        return np.linspace(float(lo), float(hi), count)
    return np.array([float(v) for v in text.split(",")])


def _coerce(key: str, raw):
    if key not in _CASTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    if key in _NUMERIC:
        try:
            value = _NUMERIC[key](raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot read {raw!r} as {_NUMERIC[key].__name__}") from None
        return value
    return str(raw).strip()


def read_config_file(path) -> dict:
    """Parse a UTF-8 ``key = value`` file; ``#`` starts a comment."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def validate(cfg: RunConfig) -> RunConfig:
    def bad(key, message):
        raise ConfigError(f"{key}: {message}")

    if cfg.subcommand not in SUBCOMMANDS:
        bad("subcommand", f"must be one of {', '.join(SUBCOMMANDS)}, got {cfg.subcommand!r}")
    if not 0.0 < cfg.hurst < 0.5:
        bad("hurst", f"must lie in (0, 1/2), got {cfg.hurst}")
    if not (np.isfinite(cfg.horizon) and cfg.horizon > 0):
        bad("horizon", f"must be positive, got {cfg.horizon}")
    if cfg.steps < 2:
        bad("steps", f"must be at least 2, got {cfg.steps}")
    if cfg.paths < 1:
        bad("paths", f"must be at least 1, got {cfg.paths}")
    if cfg.seed < 0:
        bad("seed", f"must be non-negative, got {cfg.seed}")
    if cfg.basis_degree < 1:
        bad("basis_degree", f"must be at least 1, got {cfg.basis_degree}")
    if cfg.c_hp <= 0:
        bad("c_hp", f"must be positive, got {cfg.c_hp}")
    if cfg.export_paths < 0:
        bad("export_paths", f"must be non-negative, got {cfg.export_paths}")
    for key, allowed in (("driver", DRIVER_IDS), ("terminal", TERMINAL_IDS), ("coefficients", COEFFICIENT_IDS)):
        if getattr(cfg, key) not in allowed:
            bad(key, f"unknown id {getattr(cfg, key)!r}; registered: {', '.join(allowed)}")
    try:
        cfg.gamma_spec()
    except ValueError as exc:
        bad("gamma", str(exc))
    try:
        cfg.lattice_points()
    except ValueError as exc:
        bad("lattice", str(exc))
    return cfg


def parse_config(file_values: dict | None = None, overrides: dict | None = None,
                 required: tuple = ()) -> RunConfig:
    """Merge file values and overrides (overrides win), coerce and validate."""
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            merged[key] = _coerce(key, value)
    for key in required:
        if key not in merged:
            raise ConfigError(f"{key}: required but missing")
    return validate(replace(RunConfig(), **merged))
