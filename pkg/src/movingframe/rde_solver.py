"""Solvers for dU = g(U) dX (and time-dependent g) along grid-sampled rough paths.

Two schemes share one data model:

* ``euler_n`` -- the step-N Euler scheme (N = 2 is Davie's scheme),
* ``picard``  -- Picard iteration of the level-2 controlled integral map,
  started from the zero path with the initial value absorbed into the field.

Time-dependent fields are solved through the time-extended driver and the
joined autonomous field on (s, u).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .rough_path import MultiplicativePath, brownian_samples, lift_piecewise_linear, p_variation_distance, time_extend
from .vector_fields import CapabilityError, FieldFamily, TransformedField

SCHEMES = ("euler_n", "picard")


class SolverError(ValueError):
    """Invalid solver configuration or inputs."""


class DivergenceError(RuntimeError):
    def __init__(self, step: int, message: str = "non-finite state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class NonContractionError(RuntimeError):
    """Picard differences stopped shrinking; the interval is too long."""

    def __init__(self, ratios: Sequence[float], window: tuple[int, int]):
        super().__init__(
            f"Picard map is not contracting on grid steps {window}: last ratios {list(ratios)[-3:]}"
        )
        self.ratios = list(ratios)
        self.window = window


@dataclass(frozen=True)
class SolverConfig:
    """Scheme selection and its knobs.

    ``steps`` picks a uniform solver grid that coarsens the driver's grid
    (None keeps the driver grid).  ``tol`` is the Picard stopping tolerance
    on successive sup-norm differences; it also serves as the nominal
    tolerance of the Euler scheme in cross-scheme comparisons.
    """

    scheme: str = "euler_n"
    order: int = 2
    steps: int | None = None
    picard_max_iter: int = 80
    tol: float = 1e-12
    halve_on_failure: bool = True
    joined: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise SolverError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 1 <= self.order <= 3:
            raise SolverError(f"Euler order must be 1..3, got {self.order}")
        if self.steps is not None and self.steps < 1:
            raise SolverError("steps must be positive")
        if self.tol <= 0 or self.picard_max_iter < 1:
            raise SolverError("need tol > 0 and picard_max_iter >= 1")


@dataclass
class SolutionPath:
    times: np.ndarray
    states: np.ndarray
    scheme: str
    diagnostics: dict = field(default_factory=dict)
    joined: MultiplicativePath | None = None
    time_coordinate: np.ndarray | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.states[..., -1, :]

    @property
    def initial(self) -> np.ndarray:
        return self.states[..., 0, :]


Field = Union[FieldFamily, TransformedField]


def _solver_path(X: MultiplicativePath, cfg: SolverConfig) -> MultiplicativePath:
    if cfg.steps is None or cfg.steps == X.n_steps:
        return X
    if X.n_steps % cfg.steps:
        raise SolverError(f"solver grid of {cfg.steps} steps is not a sub-grid of the {X.n_steps}-step driver grid")
    return X.coarsen(np.arange(0, X.n_steps + 1, X.n_steps // cfg.steps))


def _check_driver(g: FieldFamily, X: MultiplicativePath, order: int) -> None:
    if g.noise_dim != X.dim:
        raise SolverError(f"field has {g.noise_dim} noise columns, driver has dimension {X.dim}")
    if order > X.level:
        raise CapabilityError(f"order-{order} scheme needs driver level >= {order}, driver has {X.level}")
    if order < math.floor(X.p):
        raise SolverError(f"order {order} is below floor(p) = {math.floor(X.p)} for p = {X.p}")


def _initial(xi, batch_shape, n) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi[None]
    if xi.shape[-1] != n:
        raise SolverError(f"initial value has dimension {xi.shape[-1]}, field lives on R^{n}")
    shape = np.broadcast_shapes(xi.shape[:-1], batch_shape) + (n,)
    return np.broadcast_to(xi, shape).astype(float)


def euler_increment(ders: Sequence[np.ndarray], step: Sequence[np.ndarray], order: int) -> np.ndarray:
    """Step-N Euler increment from field levels and one step's signature levels.

    Word (i1..ij) of the signature multiplies the iterated derivative
    ``g_{i1} ... g_{ij} Id`` evaluated at the current state.
    """
    g0 = ders[0]
    inc = np.matmul(g0, step[0][..., None])[..., 0]
    if order >= 2:
        # (Dg_k g_i)[a] contracted with X2[i, k]
        dgg = np.matmul(ders[1], g0[..., None, :, :])
        inc = inc + np.sum(dgg * np.swapaxes(step[1], -1, -2)[..., None, :, :], axis=(-2, -1))
    if order >= 3:
        inc = inc + np.einsum("...akbc,...bj,...ci,...ijk->...a", ders[2], g0, g0, step[2], optimize=True)
        inc = inc + np.einsum("...akb,...bjc,...ci,...ijk->...a", ders[1], ders[1], g0, step[2], optimize=True)
    return inc


def _joined_step(g0, step, du):
    """Level-1/2 increment of Z = (X, U) over one step (V block first)."""
    x1 = step[0]
    lvl1 = np.concatenate([x1, du], axis=-1)
    if len(step) < 2:
        return (lvl1,)
    x2 = step[1]
    vv = x2
    wv = np.einsum("...ai,...ik->...ak", g0, x2)
    vw = np.einsum("...ai,...ki->...ka", g0, x2)
    ww = np.einsum("...ai,...bj,...ij->...ab", g0, g0, x2)
    top = np.concatenate([vv, vw], axis=-1)
    bottom = np.concatenate([wv, ww], axis=-1)
    return lvl1, np.concatenate([top, bottom], axis=-2)


def euler_solve(g: Field, X: MultiplicativePath, xi, cfg: SolverConfig = SolverConfig()) -> SolutionPath:
    """Step-N Euler scheme on the solver grid.

    For N = 2: U_{l+1} = U_l + g(U_l) X^1 + (Dg g)(U_l) X^2.  Time-dependent
    fields are routed through :func:`solve_time_dependent`.
    """
    if isinstance(g, TransformedField):
        return solve_time_dependent(g, X, xi, replace(cfg, scheme="euler_n"))
    N = cfg.order
    _check_driver(g, X, N)
    Xs = _solver_path(X, cfg)
    u = _initial(xi, Xs.batch_shape, g.state_dim)
    states = [u]
    joined = [] if cfg.joined else None
    for l in range(Xs.n_steps):
        step = Xs.step(l)
        ders = g.derivatives(u, N - 1)
        du = euler_increment(ders, step, N)
        u = u + du
        if not np.all(np.isfinite(u)):
            raise DivergenceError(l)
        states.append(u)
        if joined is not None:
            joined.append(_joined_step(ders[0], step[: min(2, Xs.level)], du))
    Z = None
    if joined is not None:
        levels = tuple(np.stack([s[j] for s in joined], axis=-(j + 2)) for j in range(len(joined[0])))
        Z = MultiplicativePath(Xs.grid, levels, Xs.p, None, dict(Xs.meta, joined=True))
    return SolutionPath(
        Xs.grid.copy(),
        np.stack(states, axis=-2),
        f"euler_{N}",
        {"step_sizes": np.diff(Xs.grid)},
        joined=Z,
    )


def _picard_window(F: FieldFamily, x1, x2, xi, cfg: SolverConfig, offset: int):
    """Picard iterates for the increments of one window; returns (Y, ratios, diffs, iterations)."""
    m = x1.shape[-2]
    n = F.state_dim
    batch = np.broadcast_shapes(x1.shape[:-2], xi.shape[:-1])
    Y = np.zeros(batch + (m + 1, n))
    Yp = np.zeros(batch + (m, n, F.noise_dim))
    diffs: list[float] = []
    ratios: list[float] = []
    streak = 0
    converged = False
    it = 0
    for it in range(1, cfg.picard_max_iter + 1):
        ders = F.derivatives(Y[..., :-1, :] + xi[..., None, :], 1 if x2 is not None else 0)
        inc = np.matmul(ders[0], x1[..., None])[..., 0]
        if x2 is not None:
            dgy = np.matmul(ders[1], Yp[..., None, :, :])
            inc = inc + np.sum(dgy * np.swapaxes(x2, -1, -2)[..., None, :, :], axis=(-2, -1))
        Ynew = np.concatenate([np.zeros(batch + (1, n)), np.cumsum(inc, axis=-2)], axis=-2)
        bad = ~np.isfinite(Ynew)
        if np.any(bad):
            first = int(np.argwhere(np.any(bad, axis=-1).reshape(-1, m + 1).any(axis=0))[0, 0])
            raise DivergenceError(offset + max(first - 1, 0), f"non-finite Picard iterate {it}")
        diff = float(np.max(np.abs(Ynew - Y)))
        if diffs and diffs[-1] > 0:
            ratios.append(diff / diffs[-1])
            streak = streak + 1 if ratios[-1] >= 1.0 else 0
        diffs.append(diff)
        Y, Yp = Ynew, ders[0]
        if diff <= cfg.tol * (1.0 + float(np.max(np.abs(Y)))):
            converged = True
            break
        if streak >= 3:
            raise NonContractionError(ratios, (offset, offset + m))
    return Y, ratios, diffs, it, converged


def picard_solve(g: Field, X: MultiplicativePath, xi, cfg: SolverConfig = SolverConfig(scheme="picard")) -> SolutionPath:
    """Picard iteration Y(n+1) = int g(Y(n) + xi) dX with Y(0) = 0.

    Each iterate is a level-2 controlled integral on the solver grid whose
    Gubinelli derivative is g evaluated along the previous iterate; the
    fixed point is therefore the Davie scheme's trajectory.  On
    non-contraction the window is halved (when ``cfg.halve_on_failure``) and
    solved piecewise.
    """
    if isinstance(g, TransformedField):
        return solve_time_dependent(g, X, xi, replace(cfg, scheme="picard"))
    order = min(2, X.level)
    _check_driver(g, X, order)
    Xs = _solver_path(X, cfg)
    xi0 = _initial(xi, Xs.batch_shape, g.state_dim)
    x1 = Xs.increments[0]
    x2 = Xs.increments[1] if order >= 2 else None
    windows: list[dict] = []

    def solve(i0: int, i1: int, start: np.ndarray) -> np.ndarray:
        sl1 = x1[..., i0:i1, :]
        sl2 = None if x2 is None else x2[..., i0:i1, :, :]
        try:
            Y, ratios, diffs, its, conv = _picard_window(g, sl1, sl2, start, cfg, i0)
        except NonContractionError:
            if not cfg.halve_on_failure or i1 - i0 < 2:
                raise
            mid = (i0 + i1) // 2
            left = solve(i0, mid, start)
            right = solve(mid, i1, left[..., -1, :])
            return np.concatenate([left, right[..., 1:, :]], axis=-2)
        windows.append(
            {"window": (i0, i1), "iterations": its, "ratios": ratios, "differences": diffs, "converged": conv}
        )
        return start[..., None, :] + Y

    states = solve(0, Xs.n_steps, xi0)
    windows.sort(key=lambda w: w["window"])
    diagnostics = {
        "windows": windows,
        "ratios": windows[0]["ratios"] if len(windows) == 1 else [r for w in windows for r in w["ratios"]],
        "iterations": sum(w["iterations"] for w in windows),
        "converged": all(w["converged"] for w in windows),
        "step_sizes": np.diff(Xs.grid),
    }
    return SolutionPath(Xs.grid.copy(), states, "picard", diagnostics)


def solve_time_dependent(g: TransformedField, X: MultiplicativePath, xi, cfg: SolverConfig = SolverConfig()) -> SolutionPath:
    """Solve dU = g(t, U) dX through ds = dt on the time-extended driver.

    The driver is time-extended on its own grid (so fine-scale space-time
    areas survive) and then coarsened to the solver grid.  The returned
    states drop the time coordinate, which is kept in ``time_coordinate``.
    """
    if isinstance(g, FieldFamily):
        g = TransformedField.from_field(g)
    if X.level > 2:
        X = X.truncate(2)
    if X.level == 2 and X.meta.get("coarsened"):
        warnings.warn(
            "time-extending a coarsened driver loses the fine space-time areas; "
            "pass the fine driver and set SolverConfig.steps instead",
            RuntimeWarning,
            stacklevel=2,
        )
    Xt = time_extend(X)
    F = g.extended()
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi[None]
    s0 = np.full(xi.shape[:-1] + (1,), X.grid[0])
    xi_ext = np.concatenate([s0, xi], axis=-1)
    if cfg.scheme == "picard":
        sol = picard_solve(F, Xt, xi_ext, cfg)
    else:
        sol = euler_solve(F, Xt, xi_ext, cfg)
    sol.time_coordinate = sol.states[..., 0]
    sol.states = sol.states[..., 1:]
    sol.diagnostics["time_extended"] = True
    return sol


# ---------------------------------------------------------------------------
# Wong-Zakai study


@dataclass
class WongZakaiResult:
    levels: list[int]
    errors: np.ndarray  # (n_seeds, n_levels) terminal-state errors vs the finest level
    dp_estimates: np.ndarray  # (n_levels,) mean d_p to the finest lift over the first dp_seeds
    seeds: list[int]

    @property
    def aggregate(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    def rows(self) -> list[tuple]:
        agg = self.aggregate
        return [(lvl, float(self.dp_estimates[k]), float(agg[k])) for k, lvl in enumerate(self.levels)]


def wong_zakai_study(
    g: Field,
    d: int,
    T: float,
    seed: int,
    levels: Sequence[int],
    cfg: SolverConfig = SolverConfig(),
    xi=None,
    n_seeds: int = 32,
    dp_seeds: int = 1,
    p: float = 2.5,
) -> WongZakaiResult:
    """Solve along piecewise-linear interpolations of one Brownian path per replicate.

    Level k interpolates at mesh T / 2**k and is solved on its own grid;
    errors are terminal-state distances to the finest level, which is the
    reference (so its own error is zero).
    """
    levels = sorted(int(k) for k in levels)
    if len(levels) < 2:
        raise SolverError("need at least two dyadic levels")
    top = levels[-1]
    reps = list(range(n_seeds))
    grid, vals = brownian_samples(d, T, T / 2**top, seed, reps)
    n = g.state_dim
    xi = np.zeros(n) if xi is None else np.asarray(xi, dtype=float)
    terminal = {}
    lifts = {}
    for k in levels:
        stride = 2 ** (top - k)
        path = lift_piecewise_linear(vals[:, ::stride], grid[::stride], 2, p, {"seed": seed, "level": k})
        sol = euler_solve(g, path, xi, replace(cfg, steps=None))
        terminal[k] = sol.terminal
        if dp_seeds:
            fine = np.stack(
                [
                    np.stack([np.interp(grid, grid[::stride], vals[r, ::stride, c]) for c in range(d)], axis=-1)
                    for r in range(dp_seeds)
                ]
            )
            lifts[k] = lift_piecewise_linear(fine, grid, 2, p)
    errors = np.stack([np.linalg.norm(terminal[k] - terminal[top], axis=-1) for k in levels], axis=-1)
    dps = np.zeros(len(levels))
    if dp_seeds:
        for j, k in enumerate(levels):
            dps[j] = np.mean(
                [p_variation_distance(lifts[k].replicate(r), lifts[top].replicate(r), p) for r in range(dp_seeds)]
            )
    return WongZakaiResult(levels, errors, dps, reps)
