"""Lip(gamma) vector-field families and their moving-frame transforms.

Array conventions (leading batch axes allowed everywhere):

* state ``y``: ``(..., n)``
* level 0, ``f(y)``: ``(..., n, d)`` -- column ``i`` is the field ``f_i``
* level j, ``f^j(y)``: ``(..., n, d, n, ..., n)`` with ``j`` trailing state
  axes, ``f^j[a, i, b1..bj] = d^j f_i^a / dy^b1 ... dy^bj``.
"""
from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .semigroup import FlowAction, GroupAction

FD_STEP = 1e-5


class FieldError(ValueError):
    """Input-contract violation for a field family."""


class CapabilityError(RuntimeError):
    """A frame does not provide the data a transform needs."""


def _fd_level(fn: Callable, n: int, h: float = FD_STEP) -> Callable:
    """Central-difference derivative of ``fn`` in the state, appended as a trailing axis."""

    def deriv(y):
        y = np.asarray(y, dtype=float)
        cols = []
        for b in range(n):
            e = np.zeros(n)
            e[b] = h
            cols.append((fn(y + e) - fn(y - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    return deriv


class FieldFamily:
    """Vector fields ``f_1..f_d`` on R^n with derivative levels ``f^0..f^k``.

    ``k = ceil(gamma) - 1``; levels not supplied are generated by central
    finite differences of the level below (step ``FD_STEP``).
    """

    def __init__(
        self,
        state_dim: int,
        noise_dim: int,
        evaluators: Sequence[Callable],
        gamma: float | None = None,
        bound: float | None = None,
        name: str = "field",
        state_independent: bool = False,
    ):
        if not evaluators:
            raise FieldError("need at least the level-0 evaluator")
        self.state_dim = int(state_dim)
        self.noise_dim = int(noise_dim)
        self.gamma = float(len(evaluators) if gamma is None else gamma)
        self.bound = bound
        self.name = name
        self.state_independent = bool(state_independent)
        k = math.ceil(self.gamma) - 1
        levels = list(evaluators[: k + 1])
        self.analytic_levels = len(levels)
        while len(levels) < k + 1:
            levels.append(_fd_level(levels[-1], self.state_dim))
        self.levels = tuple(levels)

    @property
    def k(self) -> int:
        return len(self.levels) - 1

    def __call__(self, y) -> np.ndarray:
        return self.levels[0](np.asarray(y, dtype=float))

    def derivatives(self, y, order: int) -> list[np.ndarray]:
        """Levels ``0..order`` at ``y`` (finite differences beyond the declared k)."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1:] != (self.state_dim,):
            raise FieldError(f"state has trailing shape {y.shape[-1:]}, field expects ({self.state_dim},)")
        levels = list(self.levels)
        while len(levels) < order + 1:
            levels.append(_fd_level(levels[-1], self.state_dim))
        return [levels[j](y) for j in range(order + 1)]

    def __repr__(self) -> str:
        return f"FieldFamily({self.name!r}, n={self.state_dim}, d={self.noise_dim}, gamma={self.gamma})"


def _batch_zeros(y, shape):
    return np.zeros(np.shape(y)[:-1] + shape)


# ---------------------------------------------------------------------------
# catalog


def constant_field(C, gamma: float = 3.0) -> FieldFamily:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, d = C.shape
    return FieldFamily(
        n,
        d,
        [
            lambda y: np.broadcast_to(C, np.shape(y)[:-1] + C.shape).copy(),
            lambda y: _batch_zeros(y, (n, d, n)),
            lambda y: _batch_zeros(y, (n, d, n, n)),
        ],
        gamma,
        float(np.linalg.norm(C)),
        "constant",
        state_independent=True,
    )


def linear_field(B, gamma: float = 3.0) -> FieldFamily:
    """f(y)[a, i] = sum_b B[a, i, b] y_b."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 3 or B.shape[0] != B.shape[2]:
        raise FieldError("linear field needs B of shape (n, d, n)")
    n, d, _ = B.shape
    return FieldFamily(
        n,
        d,
        [
            lambda y: np.einsum("aib,...b->...ai", B, y),
            lambda y: np.broadcast_to(B, np.shape(y)[:-1] + B.shape).copy(),
            lambda y: _batch_zeros(y, (n, d, n, n)),
        ],
        gamma,
        None,
        "linear",
    )


def _diagonal_field(S, g0, g1, g2, gamma, bound, name) -> FieldFamily:
    """f(y)[a, i] = S[a, i] * g(y_a) for a scalar function g."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n, d = S.shape
    eye = np.eye(n)

    def lvl0(y):
        return S * g0(y)[..., :, None]

    def lvl1(y):
        return (S * g1(y)[..., :, None])[..., None] * eye[:, None, :]

    def lvl2(y):
        diag = eye[:, None, :, None] * eye[:, None, None, :]
        return (S * g2(y)[..., :, None])[..., None, None] * diag

    return FieldFamily(n, d, [lvl0, lvl1, lvl2], gamma, bound, name)


def sine_field(S, gamma: float = 3.0) -> FieldFamily:
    """f(y)[a, i] = S[a, i] sin(y_a)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    return _diagonal_field(S, np.sin, np.cos, lambda y: -np.sin(y), gamma, float(np.abs(S).max()), "sine")


def logistic_field(S, gamma: float = 3.0) -> FieldFamily:
    """f(y)[a, i] = S[a, i] y_a (1 - y_a)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    return _diagonal_field(
        S,
        lambda y: y * (1.0 - y),
        lambda y: 1.0 - 2.0 * y,
        lambda y: np.full(np.shape(y), -2.0),
        gamma,
        None,
        "logistic",
    )


def hjm_exponential_vol(grid, scales, decays, gamma: float = 3.0) -> FieldFamily:
    """Deterministic volatility curves sigma_i(x) = c_i exp(-beta_i x) on a maturity grid.

    ``decays = 0`` gives the Ho-Lee constant volatility.
    """
    grid = np.asarray(grid, dtype=float)
    c = np.atleast_1d(np.asarray(scales, dtype=float))
    beta = np.broadcast_to(np.asarray(decays, dtype=float), c.shape)
    C = c[None, :] * np.exp(-np.outer(grid, beta))
    fam = constant_field(C, gamma)
    fam.name = "hjm_exponential"
    return fam


def linear_drift(A) -> FieldFamily:
    """Autonomous drift y -> A y as a one-column family."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return linear_field(A[:, None, :])


def logistic_drift(rate: float = 1.0, dim: int = 1) -> FieldFamily:
    return logistic_field(np.full((dim, 1), rate))


# ---------------------------------------------------------------------------
# Lip(gamma) diagnostic


class LipEstimate(NamedTuple):
    bound: float
    remainder_ratio: float
    level_bounds: tuple[float, ...]
    level_ratios: tuple[float, ...]


def lip_gamma_estimate(f: FieldFamily, sample_points, radius: float) -> LipEstimate:
    """Sampled Lip(gamma) constants of ``f``.

    Reports ``max |f^j|`` over the sample and ``max |R_j(x,y)| / |x-y|^(gamma-j)``
    over sampled pairs with ``0 < |x-y| <= radius``, where ``R_j`` is the
    Taylor remainder of level j.  A sampled diagnostic, not a proof.
    """
    pts = np.asarray(sample_points, dtype=float)
    if pts.size == 0:
        raise FieldError("sample set is empty")
    if pts.ndim == 1:
        pts = pts[:, None] if f.state_dim == 1 else pts[None, :]
    if radius <= 0:
        raise FieldError("radius must be positive")
    if pts.shape[1] != f.state_dim:
        raise FieldError(f"sample points have dimension {pts.shape[1]}, field expects {f.state_dim}")
    k = f.k
    vals = f.derivatives(pts, k)
    level_bounds = tuple(
        float(np.max(np.linalg.norm(v.reshape(v.shape[0], -1), axis=1))) for v in vals
    )
    ratios = [0.0] * (k + 1)
    diffs = pts[None, :, :] - pts[:, None, :]
    dist = np.linalg.norm(diffs, axis=-1)
    ix, iy = np.nonzero((dist > 0) & (dist <= radius))
    if ix.size:
        v = diffs[ix, iy]
        r = dist[ix, iy]
        for j in range(k + 1):
            approx = np.zeros_like(vals[j][iy])
            for l in range(k - j + 1):
                term = vals[j + l][ix]
                for _ in range(l):
                    term = np.einsum("p...b,pb->p...", term, v)
                approx = approx + term / math.factorial(l)
            rem = np.linalg.norm((vals[j][iy] - approx).reshape(ix.size, -1), axis=1)
            ratios[j] = float(np.max(rem / r ** (f.gamma - j)))
    return LipEstimate(max(level_bounds), max(ratios), level_bounds, tuple(ratios))


# ---------------------------------------------------------------------------
# HJM drift


def cumulative_trapezoid_matrix(grid) -> np.ndarray:
    """Q with (Q v)[j] = trapezoidal integral of v from grid[0] to grid[j]."""
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    h = np.diff(grid)
    Q = np.zeros((n, n))
    for j in range(1, n):
        Q[j] = Q[j - 1]
        Q[j, j - 1] += 0.5 * h[j - 1]
        Q[j, j] += 0.5 * h[j - 1]
    return Q


def hjm_drift(sigma: FieldFamily, grid) -> FieldFamily:
    """HJM drift alpha(r)(x) = sum_i sigma_i(r)(x) * int_0^x sigma_i(r)(u) du.

    The inner integral is the cumulative trapezoid on the maturity grid;
    derivative levels follow from the product rule.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size != sigma.state_dim:
        raise FieldError(f"grid of {grid.size} points for a field on R^{sigma.state_dim}")
    Q = cumulative_trapezoid_matrix(grid)
    order = min(sigma.k, 2)

    def lvl0(y):
        s = sigma.derivatives(y, 0)[0]
        I = np.einsum("ac,...ci->...ai", Q, s)
        return np.sum(s * I, axis=-1)[..., None]

    def lvl1(y):
        s, ds = sigma.derivatives(y, 1)
        I = np.einsum("ac,...ci->...ai", Q, s)
        dI = np.einsum("ac,...cib->...aib", Q, ds)
        return np.sum(ds * I[..., None] + s[..., None] * dI, axis=-2)[..., None, :]

    def lvl2(y):
        s, ds, dds = sigma.derivatives(y, 2)
        I = np.einsum("ac,...ci->...ai", Q, s)
        dI = np.einsum("ac,...cib->...aib", Q, ds)
        ddI = np.einsum("ac,...cibe->...aibe", Q, dds)
        out = (
            dds * I[..., None, None]
            + ds[..., :, None] * dI[..., None, :]
            + dI[..., :, None] * ds[..., None, :]
            + s[..., None, None] * ddI
        )
        return np.sum(out, axis=-3)[..., None, :, :]

    evals = [lvl0, lvl1, lvl2][: order + 1]
    return FieldFamily(
        sigma.state_dim, 1, evals, sigma.gamma, None, f"hjm_drift({sigma.name})", sigma.state_independent
    )


# ---------------------------------------------------------------------------
# time-dependent fields


class TransformedField:
    """Time-dependent field ``g(t, u)`` with an optional dt-column.

    ``columns(t, u)`` has shape ``(..., n, d+1)``: column 0 multiplies dt
    (zero when there is no drift) and columns ``1..d`` multiply the noise.
    Implementations supply ``columns`` together with its exact space and
    time derivatives.
    """

    def __init__(self, state_dim: int, noise_dim: int, columns, space_derivative, time_derivative,
                 has_drift: bool = False, name: str = "transformed", time_independent: bool = False):
        self.state_dim = state_dim
        self.noise_dim = noise_dim
        self._columns = columns
        self._space = space_derivative
        self._time = time_derivative
        self.has_drift = has_drift
        self.name = name
        self.time_independent = time_independent

    def columns(self, t: float, u) -> np.ndarray:
        return self._columns(float(t), np.asarray(u, dtype=float))

    def space_derivative(self, t: float, u) -> np.ndarray:
        return self._space(float(t), np.asarray(u, dtype=float))

    def time_derivative(self, t: float, u) -> np.ndarray:
        return self._time(float(t), np.asarray(u, dtype=float))

    def __call__(self, t: float, u) -> np.ndarray:
        """Noise columns g(t, u), shape (..., n, d)."""
        return self.columns(t, u)[..., 1:]

    def drift(self, t: float, u) -> np.ndarray:
        return self.columns(t, u)[..., 0]

    @classmethod
    def from_field(cls, f: FieldFamily, drift: FieldFamily | None = None) -> "TransformedField":
        """Wrap an autonomous family (zero time derivative)."""
        n = f.state_dim

        def cols(t, u):
            vals = f(u)
            dcol = drift(u) if drift is not None else np.zeros(vals.shape[:-1] + (1,))
            return np.concatenate([dcol, vals], axis=-1)

        def space(t, u):
            d1 = f.derivatives(u, 1)[1]
            dd = drift.derivatives(u, 1)[1] if drift is not None else np.zeros(d1.shape[:-2] + (1, n))
            return np.concatenate([dd, d1], axis=-2)

        def time(t, u):
            return np.zeros(np.shape(u)[:-1] + (n, f.noise_dim + 1))

        return cls(n, f.noise_dim, cols, space, time, drift is not None, f.name, time_independent=True)

    def extended(self) -> FieldFamily:
        """Autonomous family on (s, u) in R^(1+n) driven by (r, v) in R^(1+d).

        ``F(s, u)(r, v) = (r, r * drift(s, u) + g(s, u) v)``; level 1 uses the
        exact time derivative, higher levels are finite differences.
        """
        n, d = self.state_dim, self.noise_dim

        def by_time(fn, y, tail):
            y = np.asarray(y, dtype=float)
            s = y[..., 0]
            u = y[..., 1:]
            out = np.empty(y.shape[:-1] + tail)
            flat_s = s.reshape(-1)
            uniq, inv = np.unique(flat_s, return_inverse=True)
            u_flat = u.reshape(-1, n)
            o_flat = out.reshape((-1,) + tail)
            for k, t in enumerate(uniq):
                sel = inv == k
                o_flat[sel] = fn(float(t), u_flat[sel])
            return o_flat.reshape(y.shape[:-1] + tail)

        def lvl0(y):
            body = by_time(self.columns, y, (n, d + 1))
            top = np.zeros(body.shape[:-2] + (1, d + 1))
            top[..., 0, 0] = 1.0
            return np.concatenate([top, body], axis=-2)

        def lvl1(y):
            def both(t, u):
                return np.concatenate([self.time_derivative(t, u)[..., None], self.space_derivative(t, u)], axis=-1)

            body = by_time(both, y, (n, d + 1, n + 1))
            top = np.zeros(body.shape[:-3] + (1, d + 1, n + 1))
            return np.concatenate([top, body], axis=-3)

        return FieldFamily(n + 1, d + 1, [lvl0, lvl1], 2.0, None, f"extended({self.name})")


def _matrices(P: GroupAction, t: float):
    return P.matrix(t), P.matrix(-t)


def moving_frame_transform(P: GroupAction, f: FieldFamily, drift: FieldFamily | None = None) -> TransformedField:
    """g(t, u) = P_{-t} f(P_t u), with derivatives by the chain rule.

    Time derivative: ``-A g + P_{-t} Df(P_t u)[A P_t u]`` with ``A`` the
    group's generator matrix.
    """
    if P.dim != f.state_dim:
        raise FieldError(f"frame acts on R^{P.dim}, field lives on R^{f.state_dim}")
    if drift is not None and (drift.state_dim != f.state_dim or drift.noise_dim != 1):
        raise FieldError("drift must be a one-column family on the same state space")
    n, d = f.state_dim, f.noise_dim
    A = P.generator_matrix()
    frozen = f.state_independent and (drift is None or drift.state_independent)

    def raw(y, order):
        ders = f.derivatives(y, order)
        if drift is not None:
            dd = drift.derivatives(y, order)
        else:
            dd = [np.zeros(ders[j].shape[:-1 - j] + (1,) + ders[j].shape[ders[j].ndim - j :]) for j in range(order + 1)]
        return [np.concatenate([a, b], axis=-1 - j) for j, (a, b) in enumerate(zip(dd, ders))]

    def cols(t, u):
        Pp, Pm = _matrices(P, t)
        return np.matmul(Pm, raw(u @ Pp.T, 0)[0])

    def space(t, u):
        if frozen:
            return np.zeros(np.shape(u)[:-1] + (n, d + 1, n))
        Pp, Pm = _matrices(P, t)
        F1 = raw(u @ Pp.T, 1)[1]
        shp = F1.shape
        left = np.matmul(Pm, F1.reshape(shp[:-3] + (n, -1))).reshape(shp)
        return np.matmul(left, Pp)

    def time(t, u):
        if frozen:
            return -np.matmul(A, cols(t, u))
        Pp, Pm = _matrices(P, t)
        y = u @ Pp.T
        F0, F1 = raw(y, 1)
        g = np.matmul(Pm, F0)
        directional = np.matmul(F1, (y @ A.T)[..., None, :, None])[..., 0]
        return -np.matmul(A, g) + np.matmul(Pm, directional)

    return TransformedField(n, d, cols, space, time, drift is not None, f"frame({f.name})")


def flow_frame_transform(Fl: FlowAction, f: FieldFamily, drift: FieldFamily | None = None) -> TransformedField:
    """g(t, u) = DFl_t(u)^{-1} f(Fl(t, u)), the pull-back of f by the flow.

    The inverse first variation equals DFl_{-t} at Fl(t, u).  Its time
    derivative is the pulled-back bracket ``Df[f0] - Df0[f]``.
    """
    if Fl.dim != f.state_dim:
        raise FieldError(f"flow acts on R^{Fl.dim}, field lives on R^{f.state_dim}")
    if Fl.max_order < 1:
        raise CapabilityError("flow does not supply its first variation")
    if Fl.drift is None:
        raise CapabilityError("flow does not expose its generating field f0")
    n, d = f.state_dim, f.noise_dim
    f0 = Fl.drift

    def raw(y, order):
        ders = f.derivatives(y, order)
        if drift is not None:
            dd = drift.derivatives(y, order)
        else:
            dd = [np.zeros(ders[j].shape[:-1 - j] + (1,) + ders[j].shape[ders[j].ndim - j :]) for j in range(order + 1)]
        return [np.concatenate([a, b], axis=-1 - j) for j, (a, b) in enumerate(zip(dd, ders))]

    def cols(t, u):
        phi, M = Fl.evaluate(t, u, 1)
        return np.linalg.solve(M, raw(phi, 0)[0])

    def space_fd(t, u):
        return _fd_level(lambda v: cols(t, v), n)(u)

    def space(t, u):
        if Fl.max_order < 2:
            return space_fd(t, u)
        phi, M, S = Fl.evaluate(t, u, 2)
        F0, F1 = raw(phi, 1)
        g = np.linalg.solve(M, F0)
        inner = np.einsum("...aic,...cb->...aib", F1, M) - np.einsum("...acb,...ci->...aib", S, g)
        shp = inner.shape
        return np.linalg.solve(M, inner.reshape(shp[:-3] + (n, -1))).reshape(shp)

    def time(t, u):
        phi, M = Fl.evaluate(t, u, 1)
        F0, F1 = raw(phi, 1)
        h0, h1 = f0.derivatives(phi, 1)
        bracket = np.einsum("...aic,...c->...ai", F1, h0[..., 0]) - np.einsum("...ac,...ci->...ai", h1[..., 0, :], F0)
        return np.linalg.solve(M, bracket)

    return TransformedField(n, d, cols, space, time, drift is not None, f"flow_frame({f.name})")

