"""Dense H x W x T x C volumes and the low-level helpers built on them.

Storage is a C-ordered float64 array of shape (H, W, T, C), i.e. the channel
index varies fastest, then frame, column, row.
"""

from __future__ import annotations

import os
from typing import Callable

import numpy as np

from .errors import FormatError, NumericError, ShapeError

MAGIC = b"STT1\n"


class SpatiotemporalTensor:
    __slots__ = ("_data",)

    def __init__(self, values):
        a = np.array(values, dtype=np.float64, order="C", copy=True)
        if a.ndim != 4:
            raise ShapeError(f"expected a 4-d (H, W, T, C) array, got shape {a.shape}")
        if min(a.shape) < 1:
            raise ShapeError(f"all dimensions must be positive, got {a.shape}")
        if not np.isfinite(a).all():
            raise NumericError("tensor values must be finite")
        a.flags.writeable = False
        self._data = a

    @classmethod
    def zeros(cls, H, W, T, C):
        return cls(np.zeros((H, W, T, C)))

    @classmethod
    def full(cls, shape, value):
        return cls(np.full(shape, float(value)))

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying (H, W, T, C) array."""
        return self._data

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self._data.shape

    H = property(lambda self: self._data.shape[0])
    W = property(lambda self: self._data.shape[1])
    T = property(lambda self: self._data.shape[2])
    C = property(lambda self: self._data.shape[3])

    def copy_array(self) -> np.ndarray:
        return self._data.copy()

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self._data.astype(dtype)
        return self._data

    def _check(self, other):
        if not isinstance(other, SpatiotemporalTensor):
            return NotImplemented
        if other.shape != self.shape:
            raise ShapeError(f"shape mismatch: {self.shape} vs {other.shape}")
        return other._data

    def __add__(self, other):
        o = self._check(other)
        if o is NotImplemented:
            return o
        return SpatiotemporalTensor(self._data + o)

    def __sub__(self, other):
        o = self._check(other)
        if o is NotImplemented:
            return o
        return SpatiotemporalTensor(self._data - o)

    def __mul__(self, s):
        if isinstance(s, SpatiotemporalTensor):
            return SpatiotemporalTensor(self._data * self._check(s))
        return SpatiotemporalTensor(self._data * float(s))

    __rmul__ = __mul__

    def __truediv__(self, s):
        return SpatiotemporalTensor(self._data / float(s))

    def __neg__(self):
        return SpatiotemporalTensor(-self._data)

    def __eq__(self, other):
        if not isinstance(other, SpatiotemporalTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __repr__(self):
        return f"SpatiotemporalTensor(shape={self.shape})"


def as_tensor(x) -> SpatiotemporalTensor:
    return x if isinstance(x, SpatiotemporalTensor) else SpatiotemporalTensor(x)


def channel_sum(t: SpatiotemporalTensor, c: int) -> float:
    """Sum of channel ``c`` over every (i, j, k) position."""
    C = t.shape[3]
    if not 0 <= c < C:
        raise IndexError(f"channel {c} out of range for {C} channels")
    return float(t.data[..., c].sum())


def circular_shift(t: SpatiotemporalTensor, dy: int, dx: int) -> SpatiotemporalTensor:
    # result(i, j) = t((i - dy) mod H, (j - dx) mod W)
    return SpatiotemporalTensor(np.roll(t.data, (int(dy), int(dx)), axis=(0, 1)))


def finite_difference_gradient(
    f: Callable,
    t: SpatiotemporalTensor,
    h: float = 1e-5,
    *,
    batched: bool = False,
    chunk: int = 512,
) -> SpatiotemporalTensor:
    """Central-difference gradient of a scalar function at every coordinate.

    With ``batched=True`` ``f`` receives an (n, H, W, T, C) array of probe
    points and must return n values; this is only a speed-up, the probes
    are identical to the unbatched path.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    base = np.array(t.data)
    n = base.size
    grad = np.empty(n)

    if not batched:
        flat = base.reshape(-1)
        for idx in range(n):
            old = flat[idx]
            flat[idx] = old + h
            fp = f(SpatiotemporalTensor(base))
            flat[idx] = old - h
            fm = f(SpatiotemporalTensor(base))
            flat[idx] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite function value at coordinate {idx}")
            grad[idx] = (fp - fm) / (2 * h)
        return SpatiotemporalTensor(grad.reshape(base.shape))

    return SpatiotemporalTensor(finite_difference_jacobian(f, t, h, chunk=chunk)[0])


def finite_difference_jacobian(f: Callable, t: SpatiotemporalTensor, h: float = 1e-5, chunk: int = 512) -> np.ndarray:
    """Central differences of a batched, possibly vector-valued function.

    ``f`` maps an (n, H, W, T, C) array of probe points to n values or to an
    (n, m) array; the result has shape (m, H, W, T, C).
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    base = np.array(t.data)
    n = base.size
    jac = None
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        m = len(idx)
        probes = np.broadcast_to(base.reshape(-1), (2 * m, n)).copy()
        probes[np.arange(m), idx] += h
        probes[m + np.arange(m), idx] -= h
        vals = np.asarray(f(probes.reshape((2 * m,) + base.shape)), dtype=np.float64)
        vals = vals.reshape(2 * m, -1)
        if not np.isfinite(vals).all():
            raise NumericError(f"non-finite function value in probe block starting at {start}")
        if jac is None:
            jac = np.empty((vals.shape[1], n))
        jac[:, idx] = ((vals[:m] - vals[m:]) / (2 * h)).T
    return jac.reshape((-1,) + base.shape)


def to_bytes(t: SpatiotemporalTensor) -> bytes:
    H, W, T, C = t.shape
    header = MAGIC + f"{H} {W} {T} {C}\n".encode("ascii")
    return header + t.data.astype("<f8").tobytes(order="C")


def from_bytes(buf: bytes, path=None) -> SpatiotemporalTensor:
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, expected 'STT1\\n'", offset=0, path=path)
    pos = len(MAGIC)
    nl = buf.find(b"\n", pos)
    if nl < 0:
        raise FormatError("unterminated shape header", offset=pos, path=path)
    try:
        dims = [int(v) for v in buf[pos:nl].decode("ascii").split(" ")]
    except (UnicodeDecodeError, ValueError):
        raise FormatError("malformed shape header", offset=pos, path=path) from None
    if len(dims) != 4 or min(dims) < 1:
        raise FormatError(f"shape header must hold 4 positive integers, got {dims}", offset=pos, path=path)
    start = nl + 1
    count = int(np.prod(dims))
    expected = start + 8 * count
    if len(buf) < expected:
        raise FormatError(f"truncated payload: need {8 * count} bytes", offset=len(buf), path=path)
    if len(buf) > expected:
        raise FormatError("trailing bytes after payload", offset=expected, path=path)
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=start).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("non-finite value", offset=start + 8 * int(bad[0]), path=path)
    return SpatiotemporalTensor(values.reshape(dims))


def save(t: SpatiotemporalTensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(t))


def load(path) -> SpatiotemporalTensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    return from_bytes(buf, path=os.fspath(path))
