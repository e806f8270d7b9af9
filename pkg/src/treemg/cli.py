"""Command-line benchmark harness.

Configuration is a flat key=value file plus command-line overrides; every
experiment field has a flag of the same name, so figure grids over
setup x variant x flavor x k x lmax are plain shell loops.  One experiment
per invocation; the cycle reports stream to a CSV file or stdout.

Exit codes: 0 converged, 1 configuration error, 2 cycle budget exhausted,
3 diverged.
"""

from __future__ import annotations

import argparse
import sys

from .bench import (
    CSV_HEADER,
    ENGINES,
    EXIT_CONFIG_ERROR,
    ConfigError,
    ExperimentConfig,
    RunResult,
    SETUPS,
    run,
    write_csv,
)
from .solvers import VARIANTS

__all__ = ["main", "parse_args", "config_from_sources"]

_BOOL = {"on": True, "true": True, "1": True, "yes": True,
         "off": False, "false": False, "0": False, "no": False}

_FIELDS = {
    "setup": str, "k": int, "variant": str, "flavor": str,
    "lmin": int, "lmax": int, "omega": float, "omega_tilde": float,
    "omega_hat": float, "amr": "bool", "boundary_cadence": int,
    "decile": float, "engine": str, "target": float, "max_cycles": int,
    "divergence": float, "out": str,
}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    if kind == "bool":
        v = _BOOL.get(raw.strip().lower())
        if v is None:
            raise ConfigError(f"{key} expects on/off, got {raw!r}")
        return v
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} expects {kind.__name__}, got {raw!r}") from exc


def read_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
    return values


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(
        prog="treemg-bench",
        description="Additive spacetree multigrid benchmark runner.",
    )
    ap.add_argument("--config", help="key=value configuration file")
    ap.add_argument("--setup", choices=SETUPS)
    ap.add_argument("--variant", choices=VARIANTS)
    ap.add_argument("--flavor", choices=("geometric", "boxmg"))
    ap.add_argument("--k", type=int)
    ap.add_argument("--lmax", type=int)
    ap.add_argument("--lmin", type=int)
    ap.add_argument("--omega", type=float)
    ap.add_argument("--omega-tilde", dest="omega_tilde", type=float)
    ap.add_argument("--omega-hat", dest="omega_hat", type=float)
    ap.add_argument("--amr", choices=tuple(_BOOL))
    ap.add_argument("--boundary-cadence", dest="boundary_cadence", type=int)
    ap.add_argument("--decile", type=float)
    ap.add_argument("--engine", choices=ENGINES)
    ap.add_argument("--target", type=float)
    ap.add_argument("--max-cycles", dest="max_cycles", type=int)
    ap.add_argument("--divergence", type=float)
    ap.add_argument("--out", help="CSV output path (default stdout)")
    return ap.parse_args(argv)


def config_from_sources(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in _FIELDS:
        got = getattr(args, key, None)
        if got is not None:
            values[key] = _BOOL[got] if key == "amr" else got
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        cfg = config_from_sources(args)
    except (ConfigError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    result = run(cfg)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            write_csv(result, fh)
    else:
        write_csv(result, sys.stdout)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
