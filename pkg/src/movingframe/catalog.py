"""Named building blocks for experiment configs.

Every entry is built from a plain dict (one TOML table).  Names are
resolved by :func:`validate` before any computation starts.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .rough_path import MultiplicativePath, brownian_lift, lift_piecewise_linear
from .semigroup import (
    dilated_group_action,
    flow_from_field,
    identity_group,
    matrix_exp_group,
    nagy_dilate,
    shift_group_grid,
    spectral_diagonal_group,
)
from .vector_fields import (
    FieldFamily,
    constant_field,
    hjm_exponential_vol,
    linear_drift,
    linear_field,
    logistic_drift,
    logistic_field,
    sine_field,
)


class CatalogError(ValueError):
    pass


def maturity_grid(spec: dict) -> np.ndarray:
    """Uniform grid from ``{"start", "stop", "step"}`` or an explicit ``maturities`` list."""
    if "maturities" in spec:
        return np.asarray(spec["maturities"], dtype=float)
    start, stop, step = float(spec.get("start", 0.0)), float(spec["stop"]), float(spec["step"])
    n = int(round((stop - start) / step))
    if n < 1 or abs(start + n * step - stop) > 1e-9:
        raise CatalogError(f"maturity step {step} does not divide [{start}, {stop}]")
    return start + step * np.arange(n + 1)


def _matrix(spec: dict, key: str) -> np.ndarray:
    if key not in spec:
        raise CatalogError(f"missing {key!r}")
    return np.atleast_2d(np.asarray(spec[key], dtype=float))


# -- frames -----------------------------------------------------------------


def _frame_identity(spec, state_dim):
    return identity_group(int(spec.get("dim", state_dim)))


def _frame_matrix(spec, state_dim):
    return matrix_exp_group(_matrix(spec, "A"))


def _frame_spectral(spec, state_dim):
    return spectral_diagonal_group(np.asarray(spec["eigenvalues"], dtype=float))


def _frame_shift(spec, state_dim):
    return shift_group_grid(maturity_grid(spec))


def _frame_dilation(spec, state_dim):
    D = nagy_dilate(_matrix(spec, "A"), float(spec.get("omega", 0.0)), float(spec["step"]), int(spec["length"]))
    return dilated_group_action(D)


def _frame_linear_flow(spec, state_dim):
    return flow_from_field(linear_drift(_matrix(spec, "A")))


def _frame_logistic_flow(spec, state_dim):
    return flow_from_field(logistic_drift(float(spec.get("rate", 1.0)), int(spec.get("dim", state_dim))))


FRAMES: dict[str, Callable] = {
    "dilation": _frame_dilation,
    "identity": _frame_identity,
    "linear_flow": _frame_linear_flow,
    "logistic_flow": _frame_logistic_flow,
    "matrix_exp": _frame_matrix,
    "shift_group": _frame_shift,
    "spectral_diagonal": _frame_spectral,
}


# -- fields -----------------------------------------------------------------


def _field_hjm(spec):
    grid = maturity_grid(spec)
    return hjm_exponential_vol(grid, spec.get("scales", [spec.get("scale", 0.0)]),
                               spec.get("decays", [spec.get("decay", 0.0)]))


FIELDS: dict[str, Callable[[dict], FieldFamily]] = {
    "constant": lambda s: constant_field(_matrix(s, "C")),
    "hjm_exponential": _field_hjm,
    "linear": lambda s: linear_field(np.asarray(s["B"], dtype=float)),
    "logistic": lambda s: logistic_field(_matrix(s, "S")),
    "sine": lambda s: sine_field(_matrix(s, "S")),
}


# -- drivers ----------------------------------------------------------------


def _steps(T: float, mesh: float) -> int:
    n = int(round(T / mesh))
    if n < 1 or abs(n * mesh - T) > 1e-9 * max(T, 1.0):
        raise CatalogError(f"mesh {mesh} does not divide horizon {T}")
    return n


def _driver_brownian(spec, seed, replicates=None):
    reps = replicates
    if reps is None and "replicates" in spec:
        reps = range(int(spec["replicates"]))
    return brownian_lift(
        int(spec.get("d", 1)),
        float(spec.get("T", 1.0)),
        float(spec["mesh"]),
        seed,
        level=int(spec.get("level", 2)),
        replicates=reps,
        p=float(spec.get("p", 2.5)),
    )


def _driver_smooth(spec, seed, replicates=None):
    """x(t) = t * v on a uniform grid."""
    v = np.atleast_1d(np.asarray(spec.get("direction", [1.0]), dtype=float))
    T = float(spec.get("T", 1.0))
    grid = np.linspace(0.0, T, _steps(T, float(spec["mesh"])) + 1)
    return lift_piecewise_linear(grid[:, None] * v[None, :], grid, int(spec.get("level", 2)), 1.0,
                                 {"source": "smooth"})


def _driver_piecewise_linear(spec, seed, replicates=None):
    return lift_piecewise_linear(np.asarray(spec["values"], dtype=float), np.asarray(spec["grid"], dtype=float),
                                 int(spec.get("level", 2)), float(spec.get("p", 1.0)), {"source": "piecewise_linear"})


DRIVERS: dict[str, Callable[..., MultiplicativePath]] = {
    "brownian": _driver_brownian,
    "piecewise_linear": _driver_piecewise_linear,
    "smooth": _driver_smooth,
}


def build_frame(spec: dict, state_dim: int = 1):
    return FRAMES[_name(spec, FRAMES, "frame")](spec, state_dim)


def build_field(spec: dict) -> FieldFamily:
    return FIELDS[_name(spec, FIELDS, "field")](spec)


def build_driver(spec: dict, seed: int, replicates=None) -> MultiplicativePath:
    return DRIVERS[_name(spec, DRIVERS, "driver")](spec, seed, replicates)


def _name(spec: dict, table: dict, kind: str) -> str:
    name = spec.get("type")
    if name not in table:
        raise CatalogError(f"unknown {kind} {name!r}; known: {', '.join(sorted(table))}")
    return name


def validate(config: dict, experiments) -> None:
    """Reject unknown names in a config before any computation starts."""
    name = config.get("experiment")
    if name not in experiments:
        raise CatalogError(f"unknown experiment {name!r}; known: {', '.join(sorted(experiments))}")
    for key, table in (("frame", FRAMES), ("field", FIELDS), ("driver", DRIVERS)):
        if key in config:
            _name(config[key], table, key)
    for spec in config.get("fields", []):
        _name(spec, FIELDS, "field")


def listing(experiments) -> str:
    lines = []
    for title, table in (("drivers", DRIVERS), ("experiments", experiments), ("fields", FIELDS), ("frames", FRAMES)):
        lines.append(f"{title}:")
        lines.extend(f"  {name}" for name in sorted(table))
    return "\n".join(lines) + "\n"
