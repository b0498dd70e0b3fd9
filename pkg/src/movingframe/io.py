"""CSV and JSON serialization.

Floats are written with ``repr`` (shortest round-trip form), so two runs
with identical numbers produce byte-identical files.

Path JSON layout::

    {"dim": d, "level": m, "p": p, "grid": [t_0, ..., t_N],
     "origin": [x_1, ..., x_d] or null,
     "increments": [level_1, ..., level_m],   # level_j: N rows of d**j floats
     "meta": {...}}
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rough_path import MultiplicativePath, PathError


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(x) for x in row] for row in r]
    return header, np.asarray(rows, dtype=float)


def write_trace_csv(path, X: MultiplicativePath) -> Path:
    """Level-1 trace with header ``t, x_1..x_d``."""
    if X.batch_shape:
        raise PathError("trace CSV takes a single (unbatched) path")
    tr = X.trace()
    header = ["t"] + [f"x_{i + 1}" for i in range(X.dim)]
    return write_csv(path, header, ([t, *row] for t, row in zip(X.grid, tr)))


def write_curve_csv(path, times, curves) -> Path:
    """Curve snapshots with header ``time, x_0..x_M``."""
    curves = np.asarray(curves, dtype=float)
    header = ["time"] + [f"x_{j}" for j in range(curves.shape[-1])]
    return write_csv(path, header, ([t, *row] for t, row in zip(times, curves)))


def path_to_dict(X: MultiplicativePath) -> dict:
    if X.batch_shape:
        raise PathError("path JSON takes a single (unbatched) path")
    n = X.n_steps
    return {
        "dim": X.dim,
        "level": X.level,
        "p": X.p,
        "grid": X.grid.tolist(),
        "origin": None if X.origin is None else np.asarray(X.origin).tolist(),
        "increments": [x.reshape(n, -1).tolist() for x in X.increments],
        "meta": X.meta,
    }


def path_from_dict(data: dict) -> MultiplicativePath:
    d, m = int(data["dim"]), int(data["level"])
    grid = np.asarray(data["grid"], dtype=float)
    n = grid.size - 1
    incs = tuple(np.asarray(data["increments"][j - 1], dtype=float).reshape((n,) + (d,) * j) for j in range(1, m + 1))
    origin = None if data.get("origin") is None else np.asarray(data["origin"], dtype=float)
    return MultiplicativePath(grid, incs, float(data["p"]), origin, dict(data.get("meta", {})))


def write_path_json(path, X: MultiplicativePath) -> Path:
    path = Path(path)
    path.write_text(json.dumps(path_to_dict(X), indent=1, default=_json_default) + "\n")
    return path


def read_path_json(path) -> MultiplicativePath:
    return path_from_dict(json.loads(Path(path).read_text()))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, range):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def solver_diagnostic_rows(sol) -> list[tuple]:
    """Rows (step, time, state_norm, ratio) for a single solve; ratio is NaN past the recorded iterations."""
    states = sol.states if sol.states.ndim == 2 else sol.states.reshape(-1, *sol.states.shape[-2:])[0]
    ratios = list(sol.diagnostics.get("ratios", []))
    rows = []
    for l, (t, u) in enumerate(zip(sol.times, states)):
        r = ratios[l] if l < len(ratios) else float("nan")
        rows.append((l, float(t), float(np.linalg.norm(u)), r))
    return rows


DIAGNOSTIC_HEADER = ("step", "time", "state_norm", "ratio")
