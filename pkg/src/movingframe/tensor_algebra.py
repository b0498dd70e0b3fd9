"""Truncated tensor algebra over R^d and its step-m nilpotent group.

Elements are stored densely, one coefficient block per tensor level; the
block of level ``j`` has shape ``(d,) * j``.  Besides the object API
(:class:`TruncatedTensor`, :class:`GroupElement`) the module exposes batched
kernels on plain arrays (``chen_mul``, ``segment_signature`` ...) which the
path and solver layers use for Monte Carlo work.  In those kernels a
group-like element is a tuple of arrays for levels ``1..m`` (level 0 is the
implicit unit) and any number of leading batch axes is allowed.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

MAX_LEVEL = 3
GEOMETRIC_TOL = 1e-12


class AlgebraError(ValueError):
    """Raised when operands violate the algebra's input contract."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


class TruncatedTensor:
    """Element of the truncated tensor algebra of level ``level`` over R^dim."""

    __slots__ = ("dim", "level", "blocks")

    def __init__(self, blocks: Sequence, dim: int | None = None):
        if len(blocks) < 2:
            raise AlgebraError("need blocks for levels 0..m with m >= 1")
        if dim is None:
            dim = int(np.shape(blocks[1])[0])
        if dim < 1:
            raise AlgebraError(f"dimension must be positive, got {dim}")
        frozen = []
        for j, block in enumerate(blocks):
            arr = _frozen(block)
            if arr.shape != (dim,) * j:
                raise AlgebraError(
                    f"level {j} block has shape {arr.shape}, expected {(dim,) * j}"
                )
            frozen.append(arr)
        self.dim = dim
        self.level = len(blocks) - 1
        self.blocks = tuple(frozen)

    # -- constructors -----------------------------------------------------
    @classmethod
    def zeros(cls, dim: int, level: int) -> "TruncatedTensor":
        return cls([np.zeros((dim,) * j) for j in range(level + 1)], dim)

    @classmethod
    def from_vector(cls, vec, level: int) -> "TruncatedTensor":
        """Pure level-1 element (zero scalar and higher levels)."""
        vec = np.asarray(vec, dtype=float).reshape(-1)
        d = vec.size
        blocks = [np.zeros(())] + [vec] + [np.zeros((d,) * j) for j in range(2, level + 1)]
        return cls(blocks, d)

    @classmethod
    def from_flat(cls, flat, dim: int, level: int) -> "TruncatedTensor":
        flat = np.asarray(flat, dtype=float)
        if flat.size != storage_size(dim, level):
            raise AlgebraError(
                f"flat vector has {flat.size} entries, expected {storage_size(dim, level)}"
            )
        blocks, start = [], 0
        for j in range(level + 1):
            size = dim**j
            blocks.append(flat[start : start + size].reshape((dim,) * j))
            start += size
        return cls(blocks, dim)

    # -- views --------------------------------------------------------------
    def flat(self) -> np.ndarray:
        return np.concatenate([b.reshape(-1) for b in self.blocks])

    def __getitem__(self, j: int) -> np.ndarray:
        return self.blocks[j]

    def __len__(self) -> int:
        return self.level + 1

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim}, level={self.level}, flat={self.flat()!r})"

    # -- linear structure ---------------------------------------------------
    def _check_compatible(self, other: "TruncatedTensor") -> None:
        if not isinstance(other, TruncatedTensor):
            raise AlgebraError(f"expected TruncatedTensor, got {type(other).__name__}")
        if (self.dim, self.level) != (other.dim, other.level):
            raise AlgebraError(
                f"shape mismatch: (d={self.dim}, m={self.level}) vs (d={other.dim}, m={other.level})"
            )

    def __add__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        self._check_compatible(other)
        return TruncatedTensor([a + b for a, b in zip(self.blocks, other.blocks)], self.dim)

    def __sub__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        self._check_compatible(other)
        return TruncatedTensor([a - b for a, b in zip(self.blocks, other.blocks)], self.dim)

    def __neg__(self) -> "TruncatedTensor":
        return TruncatedTensor([-a for a in self.blocks], self.dim)

    def scale(self, c: float) -> "TruncatedTensor":
        return TruncatedTensor([c * a for a in self.blocks], self.dim)

    def __mul__(self, other):
        if isinstance(other, TruncatedTensor):
            return tensor_mul(self, other)
        return self.scale(float(other))

    def __rmul__(self, other):
        return self.scale(float(other))

    def allclose(self, other: "TruncatedTensor", atol: float = 1e-12) -> bool:
        self._check_compatible(other)
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(self.blocks, other.blocks))

    def dilate(self, lam: float) -> "TruncatedTensor":
        """Scale level ``j`` by ``lam**j``."""
        return type(self)([lam**j * a for j, a in enumerate(self.blocks)], self.dim)


class GroupElement(TruncatedTensor):
    """Truncated tensor with unit scalar part; invertible under ``tensor_mul``."""

    __slots__ = ()

    def __init__(self, blocks: Sequence, dim: int | None = None, *, tol: float = 1e-12):
        scalar = float(np.asarray(blocks[0]))
        if abs(scalar - 1.0) > tol:
            raise AlgebraError(f"group elements need level-0 coefficient 1, got {scalar!r}")
        super().__init__([np.ones(())] + list(blocks[1:]), dim)

    @classmethod
    def identity(cls, dim: int, level: int) -> "GroupElement":
        return cls([np.ones(())] + [np.zeros((dim,) * j) for j in range(1, level + 1)], dim)

    @classmethod
    def from_tensor(cls, x: TruncatedTensor) -> "GroupElement":
        return cls(x.blocks, x.dim)

    @classmethod
    def from_levels(cls, levels: Sequence[np.ndarray]) -> "GroupElement":
        """Build from the level ``1..m`` blocks (unit level 0 implied)."""
        return cls([np.ones(())] + [np.asarray(a, dtype=float) for a in levels])

    def levels(self) -> tuple[np.ndarray, ...]:
        return self.blocks[1:]

    def is_geometric(self, tol: float = GEOMETRIC_TOL) -> bool:
        """Level-2 shuffle identity: Sym(level 2) == a (x) a / 2."""
        return geometricity_defect(self) <= tol

    def inverse(self) -> "GroupElement":
        return group_inverse(self)


def storage_size(dim: int, level: int) -> int:
    return sum(dim**j for j in range(level + 1))


def _outer(a: np.ndarray, b: np.ndarray, i: int, k: int) -> np.ndarray:
    """Batched tensor product of a level-i block with a level-k block."""
    if i == 0:
        return a[(...,) + (None,) * k] * b
    if k == 0:
        return a * b[(...,) + (None,) * i]
    return np.einsum("...i,...j->...ij", a.reshape(a.shape[:-i] + (-1,)), b.reshape(b.shape[:-k] + (-1,))).reshape(
        np.broadcast_shapes(a.shape[:-i], b.shape[:-k]) + a.shape[a.ndim - i :] + b.shape[b.ndim - k :]
    )


def tensor_mul(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Truncated product: level ``j`` of the result is sum_{i+k=j} a_i (x) b_k."""
    if not isinstance(a, TruncatedTensor) or not isinstance(b, TruncatedTensor):
        raise AlgebraError("tensor_mul expects TruncatedTensor operands")
    a._check_compatible(b)
    blocks = []
    for j in range(a.level + 1):
        acc = np.zeros((a.dim,) * j)
        for i in range(j + 1):
            acc = acc + _outer(a.blocks[i], b.blocks[j - i], i, j - i)
        blocks.append(acc)
    if isinstance(a, GroupElement) and isinstance(b, GroupElement):
        return GroupElement(blocks, a.dim)
    return TruncatedTensor(blocks, a.dim)


def _power_series(x: TruncatedTensor, coeffs: Sequence[float]) -> TruncatedTensor:
    """sum_j coeffs[j] * x^(x)j for x with zero scalar part (terminates at level m)."""
    result = TruncatedTensor.zeros(x.dim, x.level)
    power = TruncatedTensor([np.ones(())] + [np.zeros((x.dim,) * j) for j in range(1, x.level + 1)], x.dim)
    for j in range(x.level + 1):
        if coeffs[j] != 0.0:
            result = result + power.scale(coeffs[j])
        power = tensor_mul(power, x)
    return result


def group_exp(x: TruncatedTensor) -> GroupElement:
    """Truncated tensor exponential of an element with zero scalar part."""
    if float(x.blocks[0]) != 0.0:
        raise AlgebraError(f"group_exp needs zero level-0 coefficient, got {float(x.blocks[0])!r}")
    coeffs = [1.0 / math.factorial(j) for j in range(x.level + 1)]
    return GroupElement.from_tensor(_power_series(x, coeffs))


def group_log(g: TruncatedTensor) -> TruncatedTensor:
    """Truncated logarithm; inverse of :func:`group_exp`."""
    scalar = float(g.blocks[0])
    if abs(scalar - 1.0) > 1e-12:
        raise AlgebraError(f"group_log needs level-0 coefficient 1, got {scalar!r}")
    y = TruncatedTensor([np.zeros(())] + list(g.blocks[1:]), g.dim)
    coeffs = [0.0] + [(-1.0) ** (j + 1) / j for j in range(1, g.level + 1)]
    return _power_series(y, coeffs)


def group_inverse(g: GroupElement) -> GroupElement:
    # (1 + y)^-1 = sum_j (-y)^j, finite because y is nilpotent
    if not isinstance(g, GroupElement):
        g = GroupElement.from_tensor(g)
    y = TruncatedTensor([np.zeros(())] + [-b for b in g.blocks[1:]], g.dim)
    return GroupElement.from_tensor(_power_series(y, [1.0] * (g.level + 1)))


def homogeneous_norm(g: TruncatedTensor) -> float:
    """max_j |level j|^(1/j) with the Euclidean norm on coefficient blocks."""
    return max(float(np.linalg.norm(g.blocks[j])) ** (1.0 / j) for j in range(1, g.level + 1))


def geometricity_defect(g: TruncatedTensor) -> float:
    """Max-abs violation of Sym(level 2) == a (x) a / 2 (0 for m == 1)."""
    if g.level < 2:
        return 0.0
    a, b = g.blocks[1], g.blocks[2]
    return float(np.max(np.abs(0.5 * (b + b.T) - 0.5 * np.outer(a, a))))


# ---------------------------------------------------------------------------
# batched kernels on level tuples (levels 1..m, unit scalar implied)


def chen_mul(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
    """Batched product of group-like level tuples."""
    m = len(a)
    out = []
    for j in range(1, m + 1):
        acc = a[j - 1] + b[j - 1]
        for i in range(1, j):
            acc = acc + _outer(a[i - 1], b[j - i - 1], i, j - i)
        out.append(acc)
    return tuple(out)


def chen_inverse(a: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
    m = len(a)
    y = [-x for x in a]
    out = list(y)
    power = list(y)
    for _ in range(2, m + 1):
        nxt = []
        for j in range(1, m + 1):
            acc = np.zeros_like(a[j - 1])
            for i in range(1, j):
                acc = acc + _outer(power[i - 1], y[j - i - 1], i, j - i)
            nxt.append(acc)
        power = nxt
        out = [o + p for o, p in zip(out, power)]
    return tuple(out)


def segment_signature(delta: np.ndarray, level: int) -> tuple[np.ndarray, ...]:
    """Signature of straight segments: level j is delta^(x)j / j!.

    ``delta`` has shape ``(..., d)``.
    """
    if level > MAX_LEVEL:
        raise AlgebraError(f"level {level} exceeds supported maximum {MAX_LEVEL}")
    out = [np.asarray(delta, dtype=float)]
    for j in range(2, level + 1):
        out.append(_outer(out[-1], out[0], j - 1, 1) / j)
    return tuple(out)


def fold_steps(levels: Sequence[np.ndarray], axis_len: int) -> tuple[np.ndarray, ...]:
    """Chen product over the step axis (position -(j+1) in level j).

    Pairwise tree reduction; the step axis is consumed.
    """
    cur = [np.asarray(x) for x in levels]
    n = axis_len
    while n > 1:
        half = n // 2
        ax = [x.ndim - j - 1 for j, x in enumerate(cur, start=1)]
        left = [np.take(x, np.arange(0, 2 * half, 2), axis=a) for x, a in zip(cur, ax)]
        right = [np.take(x, np.arange(1, 2 * half, 2), axis=a) for x, a in zip(cur, ax)]
        merged = list(chen_mul(left, right))
        if n % 2:
            tail = [np.take(x, [n - 1], axis=a) for x, a in zip(cur, ax)]
            merged = [np.concatenate([mrg, t], axis=a) for mrg, t, a in zip(merged, tail, ax)]
            n = half + 1
        else:
            n = half
        cur = merged
    ax = [x.ndim - j - 1 for j, x in enumerate(cur, start=1)]
    return tuple(np.squeeze(x, axis=a) for x, a in zip(cur, ax))
