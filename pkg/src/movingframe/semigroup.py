"""Moving frames on finite-dimensional state spaces.

:class:`GroupAction` covers linear groups ``P_t`` (matrix exponentials,
grid shifts, diagonal spectral groups and dilated unitary groups) and
:class:`FlowAction` covers nonlinear flows with first and second variation.
:class:`DilatedGroup` holds the discrete-time unitary power dilation of a
pseudo-contractive semigroup step.

All actions broadcast over leading batch axes of the state.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.integrate
import scipy.linalg


class FrameError(ValueError):
    """Input-contract violation for a group or flow."""


class FlowDomainError(RuntimeError):
    """Flow integration left its domain; ``time`` is how far it got."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (reached t={time!r})")
        self.time = time


def _as_state(y, dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != (dim,):
        raise FrameError(f"state has trailing shape {y.shape[-1:]}, expected ({dim},)")
    return y


class GroupAction:
    """Linear group ``t -> P_t`` acting on R^dim.

    Subclasses implement ``_matrix(t)``.  Discrete groups set ``step`` and
    only accept times that are integer multiples of it; their ``generator``
    is the backward difference quotient ``(I - P_{-step}) / step``, which
    makes ``(P_{-t-step} - P_{-t}) / step = -A P_{-t}`` hold exactly.
    """

    kind = "abstract"
    step: float | None = None

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._cache = lru_cache(maxsize=8192)(self._matrix_key)

    def _matrix(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def _matrix_key(self, key) -> np.ndarray:
        m = self._matrix(key if self.step is None else key * self.step)
        m.flags.writeable = False
        return m

    def steps_for(self, t: float) -> int:
        """Integer k with t = k * step (discrete groups only)."""
        k = int(round(t / self.step))
        if abs(t - k * self.step) > 1e-9 * max(1.0, abs(t)):
            raise FrameError(f"time {t!r} is not a multiple of the group step {self.step!r}")
        return k

    def matrix(self, t: float) -> np.ndarray:
        t = float(t)
        if self.step is not None:
            return self._cache(self.steps_for(t))
        return self._cache(t)

    def apply(self, t: float, y) -> np.ndarray:
        y = _as_state(y, self.dim)
        return y @ self.matrix(t).T

    def generator_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def generator(self, y) -> np.ndarray:
        return _as_state(y, self.dim) @ self.generator_matrix().T

    def __repr__(self) -> str:
        return f"{type(self).__name__}(kind={self.kind!r}, dim={self.dim})"


class MatrixExpGroup(GroupAction):
    kind = "matrix-exponential"

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
            raise FrameError("generator must be a finite square matrix")
        super().__init__(A.shape[0])
        self.A = A

    def _matrix(self, t):
        return scipy.linalg.expm(t * self.A)

    def generator_matrix(self):
        return self.A


class SpectralDiagonalGroup(GroupAction):
    """exp(t * diag(eigenvalues)); e.g. a spectral Galerkin discretization."""

    kind = "spectral-diagonal"

    def __init__(self, eigenvalues):
        self.eigenvalues = np.asarray(eigenvalues, dtype=float).reshape(-1)
        super().__init__(self.eigenvalues.size)

    def _matrix(self, t):
        return np.diag(np.exp(t * self.eigenvalues))

    def apply(self, t, y):
        return _as_state(y, self.dim) * np.exp(float(t) * self.eigenvalues)

    def generator_matrix(self):
        return np.diag(self.eigenvalues)


class ShiftGroup(GroupAction):
    """Shift ``P_t r(x) = r(x + t)`` on a uniform maturity grid.

    Left shifts fill the right end with the last sample, right shifts fill
    the left end with the first sample (curves flat outside the grid).
    """

    kind = "grid-shift"

    def __init__(self, grid):
        grid = np.asarray(grid, dtype=float)
        h = np.diff(grid)
        if grid.ndim != 1 or grid.size < 2 or not np.allclose(h, h[0], rtol=1e-10, atol=0):
            raise FrameError("shift group needs a uniform grid")
        super().__init__(grid.size)
        self.grid = grid
        self.step = float(h[0])

    def _index(self, k: int) -> np.ndarray:
        return np.clip(np.arange(self.dim) + k, 0, self.dim - 1)

    def _matrix(self, t):
        k = self.steps_for(t)
        m = np.zeros((self.dim, self.dim))
        m[np.arange(self.dim), self._index(k)] = 1.0
        return m

    def apply(self, t, y):
        y = _as_state(y, self.dim)
        return y[..., self._index(self.steps_for(float(t)))]

    def generator_matrix(self):
        return (np.eye(self.dim) - self.matrix(-self.step)) / self.step


def matrix_exp_group(A) -> MatrixExpGroup:
    return MatrixExpGroup(A)


def shift_group_grid(grid) -> ShiftGroup:
    return ShiftGroup(grid)


def spectral_diagonal_group(eigenvalues) -> SpectralDiagonalGroup:
    return SpectralDiagonalGroup(eigenvalues)


def identity_group(dim: int) -> MatrixExpGroup:
    return MatrixExpGroup(np.zeros((dim, dim)))


# ---------------------------------------------------------------------------
# flows


class FlowAction:
    """Nonlinear flow ``Fl(t, y)`` with variations.

    ``evaluate(t, y, order)`` returns ``(Fl, DFl, D2Fl)`` truncated to
    ``order + 1`` entries; ``DFl[..., a, c] = d Fl^a / d y^c`` and
    ``D2Fl[..., a, c, b] = d^2 Fl^a / d y^c d y^b``.
    """

    def __init__(self, dim: int, evaluate, drift=None, interval=(-np.inf, np.inf), max_order: int = 2):
        self.dim = int(dim)
        self._evaluate = evaluate
        self.drift = drift
        self.interval = interval
        self.max_order = max_order

    def evaluate(self, t: float, y, order: int = 0) -> tuple[np.ndarray, ...]:
        if order > self.max_order:
            raise FrameError(f"flow provides variations up to order {self.max_order}, asked for {order}")
        lo, hi = self.interval
        if not lo <= t <= hi:
            raise FlowDomainError("time outside the flow interval", float(np.clip(t, lo, hi)))
        return self._evaluate(float(t), _as_state(y, self.dim), order)

    def apply(self, t, y):
        return self.evaluate(t, y, 0)[0]

    def variation(self, t, y):
        return self.evaluate(t, y, 1)[1]


def flow_from_group(P: GroupAction) -> FlowAction:
    """Linear flow ``Fl(t, y) = P_t y`` (exact variations)."""

    def evaluate(t, y, order):
        M = P.matrix(t)
        out = [P.apply(t, y)]
        if order >= 1:
            out.append(np.broadcast_to(M, y.shape[:-1] + M.shape))
        if order >= 2:
            out.append(np.zeros(y.shape[:-1] + (P.dim,) * 3))
        return tuple(out)

    from .vector_fields import linear_field

    return FlowAction(P.dim, evaluate, drift=linear_field(P.generator_matrix()[:, None, :]))


def flow_from_field(f0, rtol: float = 1e-11, atol: float = 1e-13, interval=(-np.inf, np.inf)) -> FlowAction:
    """Flow of the autonomous drift ``f0`` (a FieldFamily with one noise column).

    Integrates the state together with the first and second variational
    equations using an 8th-order Runge-Kutta method; a batch of initial
    points is integrated as one system.
    """
    n = f0.state_dim
    if f0.noise_dim != 1:
        raise FrameError("flow generator must have exactly one column")

    def rhs_factory(batch: int, order: int):
        def rhs(_t, z):
            z = z.reshape(batch, -1)
            phi = z[:, :n]
            ders = f0.derivatives(phi, order)
            out = [ders[0][:, :, 0]]
            if order >= 1:
                J = ders[1][:, :, 0, :]
                M = z[:, n : n + n * n].reshape(batch, n, n)
                out.append(np.einsum("bae,bec->bac", J, M).reshape(batch, -1))
            if order >= 2:
                H = ders[2][:, :, 0, :, :]
                S = z[:, n + n * n :].reshape(batch, n, n, n)
                dS = np.einsum("baeg,bec,bgd->bacd", H, M, M) + np.einsum("bae,becd->bacd", J, S)
                out.append(dS.reshape(batch, -1))
            return np.concatenate(out, axis=1).reshape(-1)

        return rhs

    def evaluate(t, y, order):
        shape = y.shape[:-1]
        flat = y.reshape(-1, n)
        batch = flat.shape[0]
        parts = [flat]
        if order >= 1:
            parts.append(np.broadcast_to(np.eye(n).reshape(1, -1), (batch, n * n)))
        if order >= 2:
            parts.append(np.zeros((batch, n**3)))
        z0 = np.concatenate(parts, axis=1)
        if t == 0.0:
            zt = z0
        else:
            sol = scipy.integrate.solve_ivp(
                rhs_factory(batch, order), (0.0, t), z0.reshape(-1), method="DOP853", rtol=rtol, atol=atol
            )
            reached = float(sol.t[-1]) if sol.t.size else 0.0
            if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
                raise FlowDomainError(f"flow integration failed: {sol.message}", reached)
            zt = sol.y[:, -1].reshape(batch, -1)
        out = [zt[:, :n].reshape(shape + (n,))]
        if order >= 1:
            out.append(zt[:, n : n + n * n].reshape(shape + (n, n)))
        if order >= 2:
            out.append(zt[:, n + n * n :].reshape(shape + (n, n, n)))
        return tuple(out)

    return FlowAction(n, evaluate, drift=f0, interval=interval)


# ---------------------------------------------------------------------------
# unitary dilation


@dataclass(frozen=True, eq=False)
class DilatedGroup:
    """Unitary power dilation of ``T0 = exp(-omega*step) exp(step*A)``.

    Ambient space ``W = (+)_L H  (+)  H  (+)  (+)_L H`` (block ``length`` is
    H).  ``unitary`` couples H to the channels through the Julia operator
    ``[[T0, D*], [D, -T0^T]]`` and shifts the channels cyclically, so the
    compression of ``unitary^k`` to H equals ``T0^k`` for ``0 <= k <= 2L``.
    """

    generator: np.ndarray
    omega: float
    step: float
    length: int
    contraction: np.ndarray
    unitary: np.ndarray

    @property
    def dim_h(self) -> int:
        return self.contraction.shape[0]

    @property
    def dim_w(self) -> int:
        return self.unitary.shape[0]

    def embed(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        n, L = self.dim_h, self.length
        w = np.zeros(h.shape[:-1] + (self.dim_w,))
        w[..., L * n : (L + 1) * n] = h
        return w

    def project(self, w) -> np.ndarray:
        n, L = self.dim_h, self.length
        return np.asarray(w)[..., L * n : (L + 1) * n]

    def power(self, k: int) -> np.ndarray:
        U = self.unitary if k >= 0 else self.unitary.T
        return np.linalg.matrix_power(U, abs(int(k)))

    def compressed_power(self, k: int) -> np.ndarray:
        """pi U^k iota as an n x n matrix."""
        n, L = self.dim_h, self.length
        return self.power(k)[L * n : (L + 1) * n, L * n : (L + 1) * n]

    def compressed_powers(self, kmax: int) -> np.ndarray:
        """Stack of pi U^k iota for k = 0..kmax, by repeated application to iota."""
        n, L = self.dim_h, self.length
        cols = self.embed(np.eye(n)).T
        out = np.empty((kmax + 1, n, n))
        for k in range(kmax + 1):
            out[k] = cols[L * n : (L + 1) * n]
            cols = self.unitary @ cols
        return out

    def semigroup_power(self, k: int) -> np.ndarray:
        """Q_{k step} recovered as exp(omega k step) pi U^k iota."""
        return np.exp(self.omega * k * self.step) * self.compressed_power(k)


def nagy_dilate(A, omega: float, step: float, length: int, tol: float = 1e-12) -> DilatedGroup:
    """Discrete-time Sz.-Nagy dilation of the semigroup generated by ``A``.

    Defect operators come from the SVD of T0 (``D = V sqrt(1 - S^2) V^T``,
    ``D* = W sqrt(1 - S^2) W^T``), which keeps the intertwining
    ``T0 D = D* T0`` exact up to rounding even for singular values near 1.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise FrameError("generator must be square")
    if step <= 0 or length < 1:
        raise FrameError("need step > 0 and length >= 1")
    n, L = A.shape[0], int(length)
    T0 = np.exp(-omega * step) * scipy.linalg.expm(step * A)
    W_, s, Vt = np.linalg.svd(T0)
    if s[0] > 1.0 + tol:
        raise FrameError(
            f"exp(-omega*step) exp(step*A) is not a contraction: largest singular value {s[0]!r}"
        )
    s = np.minimum(s, 1.0)
    defect = np.sqrt((1.0 - s) * (1.0 + s))
    D = Vt.T @ np.diag(defect) @ Vt
    Dstar = W_ @ np.diag(defect) @ W_.T

    N = n * (2 * L + 1)
    U = np.zeros((N, N))

    def blk(i):
        return slice(i * n, (i + 1) * n)

    h, last_in, first_out = L, L - 1, L + 1
    U[blk(h), blk(h)] = T0
    U[blk(h), blk(last_in)] = Dstar
    U[blk(first_out), blk(h)] = D
    U[blk(first_out), blk(last_in)] = -T0.T
    eye = np.eye(n)
    for j in range(L + 1, 2 * L):
        U[blk(j + 1), blk(j)] = eye
    U[blk(0), blk(2 * L)] = eye
    for j in range(1, L):
        U[blk(j), blk(j - 1)] = eye
    return DilatedGroup(A, float(omega), float(step), L, T0, U)


class DilatedGroupAction(GroupAction):
    """``P_{k step} = exp(omega k step) U^k`` on the dilation space."""

    kind = "dilation"

    def __init__(self, D: DilatedGroup):
        super().__init__(D.dim_w)
        self.dilation = D
        self.step = D.step

    def _matrix(self, t):
        k = self.steps_for(t)
        return np.exp(self.dilation.omega * t) * self.dilation.power(k)

    def generator_matrix(self):
        return (np.eye(self.dim) - self.matrix(-self.step)) / self.step


def dilated_group_action(D: DilatedGroup) -> DilatedGroupAction:
    return DilatedGroupAction(D)
