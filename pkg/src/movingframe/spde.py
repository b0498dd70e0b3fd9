"""Mild solutions through the moving frame.

The unbounded linear (or nonlinear) drift is absorbed into a time-dependent
change of coordinates; the transformed equation is an ordinary RDE whose
solution U is pushed back through the frame, Y_t = P_t U_t.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .rde_solver import SolutionPath, SolverConfig, SolverError, solve_time_dependent
from .rough_path import MultiplicativePath, PathError, brownian_samples
from .semigroup import FlowAction, FlowDomainError, GroupAction, shift_group_grid
from .vector_fields import (
    FieldFamily,
    flow_frame_transform,
    hjm_drift,
    hjm_exponential_vol,
    moving_frame_transform,
)

Frame = Union[GroupAction, FlowAction]


@dataclass
class MildSolution:
    frame: Frame
    times: np.ndarray
    U: np.ndarray  # (*batch, N+1, n) on the frame
    Y: np.ndarray  # (*batch, N+1, n) in state space
    solution: SolutionPath
    driver_meta: dict = field(default_factory=dict)

    def frame_defect(self) -> float:
        """max_t |Y_t - frame_t(U_t)|, zero by construction."""
        return float(np.max(np.abs(self.Y - _push(self.frame, self.times, self.U))))

    @property
    def terminal(self) -> np.ndarray:
        return self.Y[..., -1, :]


def _push(frame: Frame, times: np.ndarray, U: np.ndarray) -> np.ndarray:
    if isinstance(frame, GroupAction):
        mats = np.stack([frame.matrix(t) for t in times])
        return np.einsum("lab,...lb->...la", mats, U)
    Y = np.empty_like(U)
    for l, t in enumerate(times):
        Y[..., l, :] = frame.apply(t, U[..., l, :])
    return Y


def _driver_meta(X: MultiplicativePath) -> dict:
    meta = dict(X.meta)
    meta.setdefault("p", X.p)
    return meta


def solve_rpde_group(
    P: GroupAction,
    f: FieldFamily,
    X: MultiplicativePath,
    xi,
    cfg: SolverConfig = SolverConfig(),
    drift: FieldFamily | None = None,
) -> MildSolution:
    """Mild solution of dY = A Y dt + drift(Y) dt + f(Y) dX via U = P_{-t} Y."""
    g = moving_frame_transform(P, f, drift)
    sol = solve_time_dependent(g, X, xi, cfg)
    Y = _push(P, sol.times, sol.states)
    return MildSolution(P, sol.times, sol.states, Y, sol, _driver_meta(X))


def solve_rpde_flow(
    Fl: FlowAction,
    f: FieldFamily,
    X: MultiplicativePath,
    xi,
    cfg: SolverConfig = SolverConfig(),
    drift: FieldFamily | None = None,
) -> MildSolution:
    """Mild solution of dY = f0(Y) dt + f(Y) dX through Y_t = Fl(t, U_t)."""
    lo, hi = Fl.interval
    if X.grid[0] < lo or X.grid[-1] > hi:
        raise FlowDomainError(f"driver horizon [{X.grid[0]}, {X.grid[-1]}] leaves the flow interval {Fl.interval}",
                              hi if X.grid[-1] > hi else lo)
    g = flow_frame_transform(Fl, f, drift)
    sol = solve_time_dependent(g, X, xi, cfg)
    Y = _push(Fl, sol.times, sol.states)
    return MildSolution(Fl, sol.times, sol.states, Y, sol, _driver_meta(X))


# ---------------------------------------------------------------------------
# pathwise semimartingale representation


@dataclass
class MildIdentityReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    reference_mesh: float

    @property
    def deviation(self) -> float:
        return float(np.max(np.abs(self.lhs - self.rhs)))


def mild_identity_check(
    sol: MildSolution,
    l,
    reference_mesh: float,
    f: FieldFamily,
    drift: FieldFamily | None = None,
) -> MildIdentityReport:
    """Compare l(Y_t) with l(P_t Y_0) + sum_i int_0^t l(P_{t-s} f_i(Y_s)) o dB^i_s.

    The Stratonovich integrals are trapezoid sums on the reference mesh
    along the Brownian path regenerated from the driver's seed (dyadic
    meshes are nested, so this is the path that built the driver).  Y is
    interpolated linearly between solver grid times.  Only forward powers
    of the frame are used.
    """
    P = sol.frame
    if not isinstance(P, GroupAction):
        raise SolverError("the representation check needs a group frame")
    meta = sol.driver_meta
    if meta.get("source") != "brownian" or "seed" not in meta:
        raise PathError("driver has no Brownian provenance; the identity is pathwise")
    if reference_mesh > meta["mesh"] * (1 + 1e-12):
        raise PathError(f"reference mesh {reference_mesh} is coarser than the driver mesh {meta['mesh']}")
    T = meta["T"]
    reps = meta.get("replicates")
    grid, B = brownian_samples(meta["d"], T, reference_mesh, meta["seed"], reps)
    l = np.asarray(l, dtype=float)
    times = sol.times
    K = grid.size - 1
    pos = np.rint(times / reference_mesh).astype(int)
    if np.any(np.abs(pos * reference_mesh - times) > 1e-9 * max(T, 1.0)):
        raise SolverError("solver grid times are not on the reference mesh")
    # l P_{k h} for k = 0..K by forward powers
    step = P.matrix(reference_mesh)
    w = np.empty((K + 1, l.size))
    w[0] = l
    for k in range(1, K + 1):
        w[k] = w[k - 1] @ step
    Y = sol.Y
    Yref = np.stack([np.interp(grid, times, Y[..., c]) if Y.ndim == 2 else _interp_batch(grid, times, Y[..., c])
                     for c in range(Y.shape[-1])], axis=-1)
    vals = f(Yref)  # (*batch, K+1, n, d)
    dB = np.diff(B, axis=-2)
    dvals = drift(Yref)[..., 0] if drift is not None else None
    h = np.diff(grid)
    rhs = np.empty(Y.shape[:-2] + (times.size,))
    for j, kj in enumerate(pos):
        lag = w[kj - np.arange(kj + 1)]  # l P_{t_j - s_k}
        phi = np.einsum("ka,...kai->...ki", lag, vals[..., : kj + 1, :, :])
        total = Y[..., 0, :] @ w[kj]
        if kj:
            total = total + np.sum(0.5 * (phi[..., :-1, :] + phi[..., 1:, :]) * dB[..., :kj, :], axis=(-2, -1))
            if dvals is not None:
                psi = np.einsum("ka,...ka->...k", lag, dvals[..., : kj + 1, :])
                total = total + np.sum(0.5 * (psi[..., :-1] + psi[..., 1:]) * h[:kj], axis=-1)
        rhs[..., j] = total
    lhs = Y @ l
    return MildIdentityReport(times.copy(), lhs, rhs, float(reference_mesh))


def _interp_batch(x, xp, fp):
    flat = fp.reshape(-1, fp.shape[-1])
    return np.stack([np.interp(x, xp, row) for row in flat]).reshape(fp.shape[:-1] + (x.size,))


# ---------------------------------------------------------------------------
# HJM


@dataclass
class HJMResult:
    solution: MildSolution
    maturities: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray  # (*batch, n_snapshots, M+1)

    @property
    def short_rate(self) -> np.ndarray:
        return self.solution.Y[..., 0]


def hjm_volatility(kind: str, grid, scale: float, decay: float = 0.0) -> FieldFamily:
    if kind == "constant":
        return hjm_exponential_vol(grid, [scale], [0.0])
    if kind == "exponential":
        return hjm_exponential_vol(grid, [scale], [decay])
    raise SolverError(f"unknown HJM volatility {kind!r}; use 'constant' or 'exponential'")


def hjm_simulate(
    sigma: FieldFamily,
    curve0,
    maturities,
    X: MultiplicativePath,
    cfg: SolverConfig = SolverConfig(),
    snapshot_times: Sequence[float] = (),
) -> HJMResult:
    """Forward-curve dynamics dr = (d/dx r + alpha(r)) dt + sigma(r) dB.

    The frame is the grid shift group, the HJM drift enters through the dt
    column of the time-extended driver, and the solver step must be a
    multiple of the maturity spacing.
    """
    maturities = np.asarray(maturities, dtype=float)
    curve0 = np.asarray(curve0, dtype=float)
    if curve0.shape[-1] != maturities.size:
        raise SolverError("initial curve and maturity grid differ in length")
    P = shift_group_grid(maturities)
    alpha = hjm_drift(sigma, maturities)
    sol = solve_rpde_group(P, sigma, X, curve0, cfg, drift=alpha)
    snaps = np.asarray(snapshot_times, dtype=float)
    idx = [int(np.argmin(np.abs(sol.times - t))) for t in snaps]
    for t, i in zip(snaps, idx):
        if abs(sol.times[i] - t) > 1e-9:
            raise SolverError(f"snapshot time {t} is not on the solver grid")
    snapshots = sol.Y[..., idx, :]
    return HJMResult(sol, maturities, snaps, snapshots)

