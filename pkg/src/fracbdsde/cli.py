"""Command-line entry point: ``fracbdsde <subcommand> [--config FILE] [--key value ...] --out DIR``."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from ._backend import configure_workers, use_numba
from .acceptance import SUBCOMMAND_CRITERIA, run_criterion, summary_lines
from .config import KEYS, SUBCOMMANDS, ConfigError, parse_config, read_config_file
from .io import write_csv, write_manifest

Z_SIGN_NOTE = ("regression Z is the martingale-representation integrand of the backward sweep; "
               "it equals minus the variational zhat = Y_var (grad X)^-1 sigma(X)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracbdsde", description=__doc__)
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="key = value file; command-line flags override it")
    for key in KEYS:
        if key == "subcommand":
            continue
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = parse_config(file_values, overrides, required=("out",))
    except (ConfigError, OSError) as exc:
        print(f"fracbdsde: configuration error: {exc}", file=sys.stderr)
        return 2

    configure_workers()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    reports = []
    for number in SUBCOMMAND_CRITERIA[cfg.subcommand]:
        rep = run_criterion(number, cfg)
        reports.append(rep)
        print("\n".join(summary_lines(rep)), flush=True)
        for name, (header, rows) in rep.tables.items():
            write_csv(out / name, header, rows)

    checks = []
    for rep in reports:
        if rep.error:
            checks.append((f"criterion {rep.number} error", False, rep.error))
        for c in rep.checks:
            if not c.informational:
                checks.append((f"[{rep.number}] {c.name}", c.passed, c.detail))
    notes = {"z_sign_convention": Z_SIGN_NOTE, "backend": "numba" if use_numba() else "numpy"}
    notes.update({f"info_{rep.number}_{i}": f"{c.name}: {c.detail}" for rep in reports
                  for i, c in enumerate(c for c in rep.checks if c.informational)})
    write_manifest(out / "manifest.txt", cfg.as_dict(), checks, time.perf_counter() - start, notes)

    failed = [rep for rep in reports if not rep.passed]
    for rep in failed:
        print(f"fracbdsde: criterion {rep.number} failed" + (f": {rep.error}" if rep.error else ""),
              file=sys.stderr)
    return 1 if failed else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
