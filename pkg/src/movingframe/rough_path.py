"""Grid-sampled geometric rough paths.

A :class:`MultiplicativePath` stores one group-like increment per grid step;
increments over longer grid intervals are defined by Chen products, so Chen
consistency holds by construction.  Increments may carry leading batch axes
(one per Monte Carlo replicate), in which case every level array has shape
``(*batch, N, d, ..., d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor_algebra import (
    MAX_LEVEL,
    GroupElement,
    chen_mul,
    fold_steps,
    segment_signature,
)


class PathError(ValueError):
    """Input-contract violation for path construction or comparison."""


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise PathError("grid needs at least two points")
    if not np.all(np.diff(grid) > 0):
        raise PathError("grid must be strictly increasing")
    return grid


@dataclass(frozen=True, eq=False)
class MultiplicativePath:
    """Rough path sampled on ``grid`` through its per-step increments.

    ``increments[j-1]`` holds level ``j``.  ``origin`` is the level-1 value at
    ``grid[0]`` (only used to report traces); ``meta`` records provenance such
    as the Brownian seed.
    """

    grid: np.ndarray
    increments: tuple[np.ndarray, ...]
    p: float = 1.0
    origin: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = _check_grid(self.grid)
        object.__setattr__(self, "grid", grid)
        incs = tuple(np.asarray(x, dtype=float) for x in self.increments)
        if not incs:
            raise PathError("a path needs at least level 1")
        if len(incs) > MAX_LEVEL:
            raise PathError(f"level {len(incs)} exceeds supported maximum {MAX_LEVEL}")
        d = incs[0].shape[-1]
        for j, x in enumerate(incs, start=1):
            if x.shape[-j:] != (d,) * j or x.shape[-j - 1] != grid.size - 1:
                raise PathError(f"level {j} increments have shape {x.shape}")
        if self.p < 1:
            raise PathError(f"p must be >= 1, got {self.p}")
        for x in incs:
            x.flags.writeable = False
        object.__setattr__(self, "increments", incs)

    # -- shape ----------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.increments[0].shape[-1]

    @property
    def level(self) -> int:
        return len(self.increments)

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.increments[0].shape[:-2]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def replicate(self, index) -> "MultiplicativePath":
        """Select batch entries (``index`` applies to the leading batch axis)."""
        if not self.batch_shape:
            raise PathError("path has no batch axis")
        origin = None if self.origin is None else self.origin[index]
        return MultiplicativePath(
            self.grid, tuple(x[index] for x in self.increments), self.p, origin, dict(self.meta)
        )

    # -- increments -------------------------------------------------------------
    def step(self, l: int) -> tuple[np.ndarray, ...]:
        return tuple(x[(Ellipsis, l) + (slice(None),) * j] for j, x in enumerate(self.increments, start=1))

    def increment_levels(self, i: int, k: int) -> tuple[np.ndarray, ...]:
        """Chen product of steps ``i..k-1`` (batched level tuple)."""
        if not 0 <= i <= k <= self.n_steps:
            raise PathError(f"invalid grid interval ({i}, {k})")
        if i == k:
            return tuple(np.zeros(self.batch_shape + (self.dim,) * j) for j in range(1, self.level + 1))
        sl = [x[(Ellipsis, slice(i, k)) + (slice(None),) * j] for j, x in enumerate(self.increments, start=1)]
        return fold_steps(sl, k - i)

    def increment(self, i: int, k: int) -> GroupElement:
        if self.batch_shape:
            raise PathError("increment() needs an unbatched path; use increment_levels")
        return GroupElement.from_levels(self.increment_levels(i, k))

    def pair_increments(self) -> tuple[np.ndarray, ...]:
        """All grid-pair increments X_{t_s, t_t}; entry ``[s, t]`` valid for s <= t.

        Built by right-multiplying one step at a time, so every entry is an
        honest Chen product (no inverses).
        """
        if self.batch_shape:
            raise PathError("pair_increments() needs an unbatched path")
        n, d = self.grid.size, self.dim
        out = [np.zeros((n, n) + (d,) * j) for j in range(1, self.level + 1)]
        for t in range(self.n_steps):
            prev = [x[: t + 1, t] for x in out]
            stp = [np.broadcast_to(s, (t + 1,) + s.shape) for s in self.step(t)]
            new = chen_mul(prev, stp)
            for x, y in zip(out, new):
                x[: t + 1, t + 1] = y
        return tuple(out)

    def trace(self) -> np.ndarray:
        """Level-1 values at the grid points, shape ``(*batch, N+1, d)``."""
        inc = self.increments[0]
        start = np.zeros(self.batch_shape + (self.dim,)) if self.origin is None else np.asarray(self.origin)
        start = np.broadcast_to(start, self.batch_shape + (self.dim,))
        return np.concatenate([start[..., None, :], start[..., None, :] + np.cumsum(inc, axis=-2)], axis=-2)

    def coarsen(self, indices: Sequence[int]) -> "MultiplicativePath":
        """Restrict to the sub-grid ``grid[indices]`` via Chen products."""
        idx = np.asarray(indices, dtype=int)
        if idx.ndim != 1 or idx.size < 2 or np.any(np.diff(idx) <= 0):
            raise PathError("sub-grid indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] > self.n_steps:
            raise PathError("sub-grid indices out of range")
        steps = np.diff(idx)
        if np.all(steps == steps[0]):
            r, nc = int(steps[0]), idx.size - 1
            parts = []
            for j, x in enumerate(self.increments, start=1):
                sl = x[(Ellipsis, slice(idx[0], idx[-1])) + (slice(None),) * j]
                shp = sl.shape[: -j - 1] + (nc, r) + sl.shape[-j:]
                parts.append(sl.reshape(shp))
            new = fold_steps(parts, r)
        else:
            segs = [self.increment_levels(int(a), int(b)) for a, b in zip(idx[:-1], idx[1:])]
            new = tuple(
                np.stack([s[j] for s in segs], axis=-(j + 2)) for j in range(self.level)
            )
        origin = None
        if self.origin is not None or idx[0] != 0:
            origin = self.trace()[..., idx[0], :]
        meta = dict(self.meta)
        if idx.size < self.grid.size:
            meta["coarsened"] = True
        return MultiplicativePath(self.grid[idx], new, self.p, origin, meta)

    def truncate(self, level: int) -> "MultiplicativePath":
        if not 1 <= level <= self.level:
            raise PathError(f"cannot truncate level-{self.level} path to level {level}")
        return MultiplicativePath(self.grid, self.increments[:level], self.p, self.origin, dict(self.meta))

    def project(self, coords: Sequence[int]) -> "MultiplicativePath":
        """Image under the coordinate projection onto ``coords``."""
        c = np.asarray(coords, dtype=int)
        new = []
        for j, x in enumerate(self.increments, start=1):
            sel = x
            for ax in range(j):
                sel = np.take(sel, c, axis=x.ndim - j + ax)
            new.append(sel)
        origin = None if self.origin is None else np.asarray(self.origin)[..., c]
        return MultiplicativePath(self.grid, tuple(new), self.p, origin, dict(self.meta))


# ---------------------------------------------------------------------------
# constructors


def lift_piecewise_linear(values, grid, level: int = 2, p: float = 1.0, meta: dict | None = None) -> MultiplicativePath:
    """Canonical lift of the piecewise-linear interpolation of ``values``.

    ``values`` has shape ``(*batch, N+1, d)`` (a 1-d array is read as d = 1).
    Each step carries the signature of a straight segment; longer intervals
    follow from Chen's identity.
    """
    grid = _check_grid(grid)
    if level < 1:
        raise PathError(f"level must be >= 1, got {level}")
    if level > MAX_LEVEL:
        raise PathError(f"level {level} exceeds supported maximum {MAX_LEVEL}")
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[-2] != grid.size:
        raise PathError(f"{values.shape[-2]} samples for a grid of {grid.size} points")
    incs = segment_signature(np.diff(values, axis=-2), level)
    return MultiplicativePath(grid, incs, p, values[..., 0, :], dict(meta or {}))


def _n_fine(T: float, mesh: float) -> int:
    n = int(round(T / mesh))
    if n < 1 or abs(n * mesh - T) > 1e-9 * max(T, 1.0):
        raise PathError(f"mesh {mesh} does not divide horizon {T}")
    return n


def replicate_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Independent stream for (seed, replicate)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(replicate),)))


def _bridge(z: np.ndarray, T: float) -> np.ndarray:
    """Dyadic Brownian-bridge (Levy) construction from standard normals.

    ``z`` has shape ``(*batch, 2**K, d)``; returns values at the ``2**K + 1``
    grid points.  Refining K keeps every coarser sample because the normals
    are consumed level by level.
    """
    n = z.shape[-2]
    K = n.bit_length() - 1
    vals = np.zeros(z.shape[:-2] + (n + 1, z.shape[-1]))
    vals[..., n, :] = math.sqrt(T) * z[..., 0, :]
    used = 1
    for k in range(1, K + 1):
        stride = n >> k
        mids = np.arange(stride, n, 2 * stride)
        var = T / 2**k / 2  # conditional variance at the midpoint of a span T/2**(k-1)
        vals[..., mids, :] = 0.5 * (vals[..., mids - stride, :] + vals[..., mids + stride, :]) + math.sqrt(var) * z[
            ..., used : used + mids.size, :
        ]
        used += mids.size
    return vals


def brownian_samples(d: int, T: float, mesh: float, seed: int, replicates=None) -> tuple[np.ndarray, np.ndarray]:
    """Brownian values on the grid ``0, mesh, ..., T``.

    With a dyadic step count the path is built by bridge refinement, so the
    same seed yields nested samples across dyadic meshes; otherwise i.i.d.
    Gaussian increments are used.  ``replicates`` (an iterable of indices)
    adds a leading batch axis, one RNG stream per replicate.
    """
    if d < 1:
        raise PathError(f"dimension must be >= 1, got {d}")
    if T <= 0:
        raise PathError(f"horizon must be positive, got {T}")
    n = _n_fine(T, mesh)
    reps = [0] if replicates is None else list(replicates)
    z = np.stack([replicate_rng(seed, r).standard_normal((n, d)) for r in reps])
    if n & (n - 1) == 0:
        vals = _bridge(z, T)
    else:
        vals = np.concatenate([np.zeros((len(reps), 1, d)), np.cumsum(math.sqrt(T / n) * z, axis=-2)], axis=-2)
    grid = np.linspace(0.0, T, n + 1)
    if replicates is None:
        vals = vals[0]
    return grid, vals


def brownian_lift(
    d: int,
    T: float,
    mesh: float,
    seed: int,
    level: int = 2,
    out_steps: int | None = None,
    replicates=None,
    p: float = 2.5,
) -> MultiplicativePath:
    """Brownian rough path as the lift of its fine piecewise-linear interpolation.

    The fine lift is coarsened to ``out_steps`` uniform steps by Chen
    products (kept on the fine grid when ``out_steps`` is None).
    """
    if level < math.floor(p):
        raise PathError(f"level {level} below floor(p) for p={p}")
    grid, vals = brownian_samples(d, T, mesh, seed, replicates)
    meta = {"source": "brownian", "seed": int(seed), "mesh": float(mesh), "T": float(T), "d": int(d)}
    if replicates is not None:
        meta["replicates"] = [int(r) for r in replicates]
    path = lift_piecewise_linear(vals, grid, level, p, meta)
    if out_steps is not None:
        n = grid.size - 1
        if out_steps < 1 or n % out_steps:
            raise PathError(f"output grid of {out_steps} steps is not a coarsening of {n} fine steps")
        path = path.coarsen(np.arange(0, n + 1, n // out_steps))
    return path


def time_extend(X: MultiplicativePath) -> MultiplicativePath:
    """Adjoin the 1-rough path t -> t as coordinate 0.

    Cross iterated integrals are Young integrals of the piecewise-linear time
    coordinate against the level-1 trace (trapezoidal on the grid), so each
    step of the result is again a straight-segment signature in R^(1+d).
    """
    if X.level > 2:
        raise PathError(f"time extension supports level <= 2, got {X.level}")
    dt = np.diff(X.grid)
    x1 = X.increments[0]
    tcol = np.broadcast_to(dt[:, None], x1.shape[:-1] + (1,))
    lvl1 = np.concatenate([tcol, x1], axis=-1)
    incs = [lvl1]
    if X.level == 2:
        d = X.dim
        lvl2 = np.empty(x1.shape[:-1] + (d + 1, d + 1))
        lvl2[..., 0, 0] = 0.5 * dt**2
        cross = 0.5 * dt[:, None] * x1
        lvl2[..., 0, 1:] = cross
        lvl2[..., 1:, 0] = cross
        lvl2[..., 1:, 1:] = X.increments[1]
        incs.append(lvl2)
    origin = None
    if X.origin is not None:
        o = np.asarray(X.origin)
        origin = np.concatenate([np.full(o.shape[:-1] + (1,), X.grid[0]), o], axis=-1)
    meta = dict(X.meta)
    meta["time_extended"] = True
    return MultiplicativePath(X.grid, tuple(incs), X.p, origin, meta)


# ---------------------------------------------------------------------------
# p-variation


def _check_pair(X: MultiplicativePath, Y: MultiplicativePath, p: float) -> int:
    if X.batch_shape or Y.batch_shape:
        raise PathError("p-variation needs unbatched paths")
    if X.dim != Y.dim:
        raise PathError(f"dimension mismatch {X.dim} vs {Y.dim}")
    if X.grid.shape != Y.grid.shape or not np.array_equal(X.grid, Y.grid):
        raise PathError("paths live on different grids; resample explicitly first")
    top = math.floor(p)
    if min(X.level, Y.level) < top:
        raise PathError(f"p={p} needs level >= {top}")
    return top


def identity_path(like: MultiplicativePath) -> MultiplicativePath:
    return MultiplicativePath(
        like.grid, tuple(np.zeros_like(x) for x in like.increments), like.p
    )


def _level_costs(X: MultiplicativePath, Y: MultiplicativePath, p: float) -> list[np.ndarray]:
    """Per level i, the matrix |X^i_{s,t} - Y^i_{s,t}|^(p/i) (upper triangle)."""
    top = _check_pair(X, Y, p)
    px, py = X.pair_increments(), Y.pair_increments()
    n = X.grid.size
    out = []
    for i in range(1, top + 1):
        diff = (px[i - 1] - py[i - 1]).reshape(n, n, -1)
        out.append(np.linalg.norm(diff, axis=-1) ** (p / i))
    return out


def _partition_value(cost: np.ndarray, points: Sequence[int]) -> float:
    pts = np.asarray(points)
    return float(np.sum(cost[pts[:-1], pts[1:]]))


def _dyadic_partitions(n_steps: int) -> list[list[int]]:
    parts = []
    k = 1
    while True:
        pts = list(range(0, n_steps, k)) + [n_steps]
        parts.append(pts)
        if k >= n_steps:
            break
        k *= 2
    return parts


def _greedy_refine(cost: np.ndarray, points: list[int], max_iter: int) -> list[int]:
    """Local search by single-point insertions and deletions (best move first)."""
    pts = np.asarray(points, dtype=int)
    n = cost.shape[0]
    for _ in range(max_iter):
        left, right = pts[:-1], pts[1:]
        width = right - left - 1
        best_gain, best_move = 0.0, None
        if width.sum():
            gap = np.repeat(np.arange(left.size), width)
            start = np.repeat(np.cumsum(width) - width, width)
            c = left[gap] + 1 + (np.arange(gap.size) - start)
            gains = cost[left[gap], c] + cost[c, right[gap]] - cost[left[gap], right[gap]]
            j = int(np.argmax(gains))
            if gains[j] > best_gain:
                best_gain, best_move = float(gains[j]), ("ins", int(gap[j]) + 1, int(c[j]))
        if pts.size > 2:
            a, c, b = pts[:-2], pts[1:-1], pts[2:]
            gains = cost[a, b] - cost[a, c] - cost[c, b]
            j = int(np.argmax(gains))
            if gains[j] > best_gain:
                best_gain, best_move = float(gains[j]), ("del", j + 1, int(c[j]))
        total = _partition_value(cost, pts)
        if best_move is None or best_gain <= 1e-15 * max(total, 1e-300):
            break
        kind, pos, c = best_move
        pts = np.insert(pts, pos, c) if kind == "ins" else np.delete(pts, pos)
    assert pts[0] == 0 and pts[-1] == n - 1
    return [int(x) for x in pts]


def _dp_sup(cost: np.ndarray) -> float:
    """Exact supremum over all grid subdivisions of [t_0, t_N]."""
    n = cost.shape[0]
    best = np.zeros(n)
    for t in range(1, n):
        best[t] = np.max(best[:t] + cost[:t, t])
    return float(best[-1])


_METHODS = ("dyadic", "dyadic+greedy", "dp")


def p_variation_distance(
    X: MultiplicativePath, Y: MultiplicativePath, p: float, method: str = "dyadic+greedy"
) -> float:
    """Estimate d_p(X, Y) on the shared grid.

    The supremum over subdivisions is replaced by a maximum over a family of
    grid partitions: ``"dyadic"`` (all dyadic coarsenings), ``"dyadic+greedy"``
    (plus local search from the best dyadic one) or ``"dp"`` (every grid
    partition, by dynamic programming).  Each family contains the previous
    one, so the estimates are ordered, and all are lower bounds for the
    continuous-time supremum.
    """
    if method not in _METHODS:
        raise PathError(f"unknown method {method!r}; choose from {_METHODS}")
    if p < 1:
        raise PathError(f"p must be >= 1, got {p}")
    costs = _level_costs(X, Y, p)
    n_steps = X.n_steps
    result = 0.0
    for i, cost in enumerate(costs, start=1):
        if method == "dp":
            sup = _dp_sup(cost)
        else:
            cands = _dyadic_partitions(n_steps)
            vals = [_partition_value(cost, c) for c in cands]
            k = int(np.argmax(vals))
            sup = vals[k]
            if method == "dyadic+greedy":
                refined = _greedy_refine(cost, cands[k], max_iter=10 * (n_steps + 1))
                sup = max(sup, _partition_value(cost, refined))
        result = max(result, sup ** (i / p))
    return result


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True, eq=False)
class Control:
    """Control function tabulated on the grid simplex: ``values[s, t]`` = omega(t_s, t_t)."""

    grid: np.ndarray
    values: np.ndarray
    p: float

    def __call__(self, s: int, t: int) -> float:
        return float(self.values[s, t])

    def at(self, s: float, t: float) -> float:
        i = int(np.searchsorted(self.grid, s))
        k = int(np.searchsorted(self.grid, t))
        if not (np.isclose(self.grid[i], s) and np.isclose(self.grid[k], t)):
            raise PathError("control is only tabulated on grid points")
        return self(i, k)

    def superadditivity_defect(self) -> float:
        """max over s <= t <= u of omega(s,t) + omega(t,u) - omega(s,u) (<= 0 when valid)."""
        w = self.values
        n = w.shape[0]
        worst = -np.inf
        for t in range(n):
            lhs = w[: t + 1, t][:, None] + w[t, t:][None, :]
            worst = max(worst, float(np.max(lhs - w[: t + 1, t:])))
        return worst

    def scaled(self, c: float) -> "Control":
        return Control(self.grid, c * self.values, self.p)


def _window_sups(cost: np.ndarray) -> np.ndarray:
    """W[s, t] = sup over subdivisions of [t_s, t_t] of the summed costs."""
    n = cost.shape[0]
    W = np.zeros((n, n))
    for t in range(1, n):
        cand = W[:, :t] + cost[None, :t, t]
        mask = np.arange(t)[None, :] >= np.arange(n)[:, None]
        cand = np.where(mask, cand, -np.inf)
        W[:t, t] = np.max(cand[:t], axis=1)
    return W


def control_from_path(X: MultiplicativePath, p: float) -> Control:
    """omega(s,t) = sum over levels i <= floor(p) of the (p/i)-variation of X^i on [s,t].

    Each term is an exact supremum over grid subdivisions, hence
    super-additive on the grid, and |X^i_{s,t}| <= omega(s,t)^(i/p) holds by
    taking the trivial partition.
    """
    costs = _level_costs(X, identity_path(X), p)
    omega = sum(_window_sups(c) for c in costs)
    return Control(X.grid.copy(), omega, p)


@dataclass
class ConvergenceCertificate:
    indices: list[int]
    rates: np.ndarray
    omega_scale: float
    levels: int
    p: float
    dp_estimates: np.ndarray
    passed: bool
    failures: list[str] = field(default_factory=list)

    @property
    def nonincreasing(self) -> bool:
        """Whether the raw rates a(n) are already nonincreasing."""
        return bool(np.all(np.diff(self.rates) <= 1e-12 * (1 + np.abs(self.rates[:-1]))))

    @property
    def envelope(self) -> np.ndarray:
        """sup over m >= n of a(m): a nonincreasing sequence that still bounds every later path."""
        return np.maximum.accumulate(self.rates[::-1])[::-1]


def controlled_convergence_check(
    X_seq: Sequence[MultiplicativePath],
    X: MultiplicativePath,
    omega: Control,
    p: float,
    zero_tol: float = 1e-13,
) -> ConvergenceCertificate:
    """Smallest a(n) with |X(n)^i - X^i| <= a(n) omega^(i/p) on all grid pairs.

    omega is first rescaled by the least factor >= 1 making the absolute
    bounds |X(n)^i|, |X^i| <= omega^(i/p) hold for every path.  The d_p
    estimates are reported alongside, not inferred from a(n).
    """
    top = math.floor(p)
    n = X.grid.size
    if omega.values.shape != (n, n) or not np.array_equal(omega.grid, X.grid):
        raise PathError("control is tabulated on a different grid")
    iu = np.triu_indices(n, k=1)
    w = omega.values[iu]
    pos = w > 0
    failures: list[str] = []
    base = [x.reshape(n, n, -1)[iu] for x in X.pair_increments()[:top]]
    seq = []
    for Xn in X_seq:
        _check_pair(Xn, X, p)
        seq.append([x.reshape(n, n, -1)[iu] for x in Xn.pair_increments()[:top]])

    scale = 1.0
    for k, levels in enumerate([base] + seq):
        for i, lv in enumerate(levels, start=1):
            norms = np.linalg.norm(lv, axis=-1)
            if np.any(norms[~pos] > zero_tol):
                failures.append(f"path {k - 1 if k else 'limit'}: nonzero level-{i} increment where omega = 0")
            if np.any(pos):
                scale = max(scale, float(np.max(norms[pos] ** (p / i) / w[pos])))
    ws = scale * w

    rates = []
    for n_idx, levels in enumerate(seq):
        a = 0.0
        for i, (lv, lb) in enumerate(zip(levels, base), start=1):
            diff = np.linalg.norm(lv - lb, axis=-1)
            if np.any(diff[~pos] > zero_tol):
                failures.append(f"X({n_idx}): level-{i} difference where omega = 0")
            if np.any(pos):
                a = max(a, float(np.max(diff[pos] / ws[pos] ** (i / p))))
        rates.append(a)
    dps = np.array([p_variation_distance(Xn, X, p) for Xn in X_seq])
    return ConvergenceCertificate(
        indices=list(range(len(X_seq))),
        rates=np.array(rates),
        omega_scale=scale,
        levels=top,
        p=p,
        dp_estimates=dps,
        passed=not failures,
        failures=failures,
    )
