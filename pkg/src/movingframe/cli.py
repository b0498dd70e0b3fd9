"""Command line entry point.

    movingframe run CONFIG.toml [--seed N] [--out DIR]
    movingframe list

Output directory: ``--out`` if given, otherwise ``$MOVINGFRAME_OUT/<experiment>``
(default ``runs/<experiment>``).  ``manifest.json`` is written first with
status ``running`` and rewritten at the end, so an interrupted run is
recognisable.  Exit codes: 0 all acceptance records pass (or none exist),
3 some record failed, 2 invalid config, 1 any other error; errors are also
printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__, catalog
from .experiments import EXPERIMENTS
from .io import write_csv, write_json

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_ENV = "MOVINGFRAME_OUT"


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _versions() -> dict:
    return {"movingframe": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def output_dir(experiment: str, out=None) -> Path:
    if out is not None:
        return Path(out)
    return Path(os.environ.get(OUT_ENV, "runs")) / experiment


def run(config_path, seed: int | None = None, out=None) -> int:
    config = load_config(config_path)
    try:
        catalog.validate(config, EXPERIMENTS)
    except catalog.CatalogError as exc:
        raise ConfigError(str(exc)) from exc
    name = config["experiment"]
    seed = int(config.get("seed", 0) if seed is None else seed)
    target = output_dir(name, out)
    target.mkdir(parents=True, exist_ok=True)
    manifest = {
        "experiment": name,
        "seed": seed,
        "config_path": str(config_path),
        "config": config,
        "versions": _versions(),
        "status": "running",
        "started": _now(),
    }
    write_json(target / "manifest.json", manifest)
    t0 = time.perf_counter()
    try:
        result = EXPERIMENTS[name](config, seed)
    except Exception as exc:
        manifest.update(status="failed", finished=_now(), error={"type": type(exc).__name__, "message": str(exc)},
                        timings={"total_seconds": time.perf_counter() - t0})
        write_json(target / "manifest.json", manifest)
        raise
    elapsed = time.perf_counter() - t0
    files = [write_csv(target / "results.csv", result.header, result.rows).name]
    for fname, (header, rows) in sorted(result.tables.items()):
        files.append(write_csv(target / fname, header, rows).name)
    all_pass = all(r["pass"] for r in result.acceptance)
    if result.acceptance:
        write_json(target / "acceptance.json", {"experiment": name, "seed": seed, "records": result.acceptance,
                                                "all_pass": all_pass})
        files.append("acceptance.json")
    manifest.update(status="completed", finished=_now(), timings={"total_seconds": elapsed}, outputs=files,
                    all_pass=all_pass)
    write_json(target / "manifest.json", manifest)
    for r in result.acceptance:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['criterion']}")
    print(f"wrote {target}")
    return 0 if all_pass else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="movingframe", description="moving-frame RDE/SPDE experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="TOML experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<experiment>)")
    sub.add_parser("list", help="list catalog entries")
    args = parser.parse_args(argv)
    if args.command == "list":
        sys.stdout.write(catalog.listing(EXPERIMENTS))
        return 0
    try:
        return run(args.config, args.seed, args.out)
    except ConfigError as exc:
        _error(exc)
        return 2
    except Exception as exc:  # surfaced as machine-readable JSON
        _error(exc)
        return 1


def _error(exc: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
