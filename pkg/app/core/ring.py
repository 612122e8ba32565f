"""Fixed-point encoding over the 64-bit ring and a shape-aware ring tensor base.

Ring elements are numpy ``uint64`` values; all arithmetic wraps modulo 2**64.
Values at or above 2**63 are the negatives of two's complement.
"""

from typing import Iterable, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from .errors import RangeError, ScaleError, ShapeError
from .types import FixedPointConfig

RING_DTYPE = np.uint64
SIGNED_DTYPE = np.int64

ArrayLike = Union[float, int, Sequence, np.ndarray]

T = TypeVar("T", bound="RingTensor")


def as_ring(values: ArrayLike) -> np.ndarray:
    """Coerce integers (possibly negative Python ints) into ring elements."""
    arr = np.asarray(values)
    if arr.dtype == RING_DTYPE:
        return arr
    if arr.dtype == object:
        return np.vectorize(lambda v: int(v) % (1 << 64), otypes=[RING_DTYPE])(arr)
    if np.issubdtype(arr.dtype, np.signedinteger):
        return arr.astype(SIGNED_DTYPE).view(RING_DTYPE)
    return arr.astype(RING_DTYPE)


def signed(values: np.ndarray) -> np.ndarray:
    """Signed (two's complement) view of ring elements."""
    return np.asarray(values, dtype=RING_DTYPE).view(SIGNED_DTYPE)


def encode_fixed(r: ArrayLike, cfg: FixedPointConfig, frac_bits: Optional[int] = None) -> np.ndarray:
    """Encode reals as round(r * 2^f) mod 2^64, rounding ties to even.

    Raises RangeError when any |r| is at or above 2^(63-f).
    """
    bits = cfg.fractional_bits if frac_bits is None else frac_bits
    arr = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise RangeError("cannot encode non-finite values")
    bound = 2.0 ** (63 - bits)
    if arr.size and np.max(np.abs(arr)) >= bound:
        raise RangeError(f"|r| must be below 2^{63 - bits} for {bits} fractional bits")
    scaled = np.rint(np.ldexp(arr, bits))
    # rint can land exactly on 2^63 for values just under the bound
    scaled = np.clip(scaled, -(2.0 ** 63), np.nextafter(2.0 ** 63, 0))
    return scaled.astype(SIGNED_DTYPE).view(RING_DTYPE)


def decode_fixed(v: ArrayLike, cfg: FixedPointConfig, frac_bits: Optional[int] = None) -> np.ndarray:
    """Signed-interpret ring elements and divide by 2^f."""
    bits = cfg.fractional_bits if frac_bits is None else frac_bits
    return np.ldexp(signed(as_ring(v)).astype(np.float64), -bits)


def arithmetic_shift(values: np.ndarray, bits: int) -> np.ndarray:
    """Sign-preserving right shift of ring elements."""
    return (signed(values) >> SIGNED_DTYPE(bits)).view(RING_DTYPE)


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"shapes {a} and {b} do not broadcast") from exc


class RingTensor:
    """Ring data with a logical shape and a fixed-point scale.

    ``data`` may carry leading bookkeeping axes (``lead`` of them) in front of
    the logical shape; structural operations act on the logical axes only.
    """

    lead: int = 0

    def __init__(self, data: np.ndarray, scale: int):
        self.data = np.asarray(data, dtype=RING_DTYPE)
        self.scale = int(scale)

    # subclasses rebuild themselves through this hook
    def _wrap(self: T, data: np.ndarray, scale: int = None) -> T:
        return type(self)(data, self.scale if scale is None else scale)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape[self.lead:]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def _axis(self, axis: int) -> int:
        return axis + self.lead if axis >= 0 else axis

    def with_scale(self: T, scale: int) -> T:
        """Relabel the scale without touching ring data."""
        return self._wrap(self.data, scale)

    def reshape(self: T, *shape) -> T:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self._wrap(self.data.reshape(self.data.shape[:self.lead] + tuple(shape)))

    def transpose(self: T, *axes) -> T:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        order = tuple(range(self.lead)) + tuple(a % self.ndim + self.lead for a in axes)
        return self._wrap(self.data.transpose(order))

    def swapaxes(self: T, a: int, b: int) -> T:
        return self._wrap(np.swapaxes(self.data, self._axis(a), self._axis(b)))

    def moveaxis(self: T, source: int, destination: int) -> T:
        return self._wrap(np.moveaxis(self.data, self._axis(source), self._axis(destination)))

    def expand_dims(self: T, axis: int) -> T:
        return self._wrap(np.expand_dims(self.data, self._axis(axis)))

    def broadcast_to(self: T, shape: Tuple[int, ...]) -> T:
        target = self.data.shape[:self.lead] + tuple(shape)
        try:
            return self._wrap(np.broadcast_to(self.data, target).copy())
        except ValueError as exc:
            raise ShapeError(f"cannot broadcast {self.shape} to {tuple(shape)}") from exc

    def sum(self: T, axis: int = -1, keepdims: bool = False) -> T:
        return self._wrap(np.sum(self.data, axis=self._axis(axis), keepdims=keepdims, dtype=RING_DTYPE))

    def __getitem__(self: T, index) -> T:
        if not isinstance(index, tuple):
            index = (index,)
        return self._wrap(self.data[(slice(None),) * self.lead + index])

    def __len__(self) -> int:
        return self.shape[0]

    @classmethod
    def concat(cls, tensors: Iterable[T], axis: int = -1) -> T:
        tensors = list(tensors)
        if not tensors:
            raise ShapeError("nothing to concatenate")
        first = tensors[0]
        if any(t.scale != first.scale for t in tensors):
            raise ScaleError("cannot concatenate tensors with different scales")
        data = np.concatenate([t.data for t in tensors], axis=first._axis(axis))
        return first._wrap(data)

    @classmethod
    def stack(cls, tensors: Iterable[T], axis: int = 0) -> T:
        tensors = [t.expand_dims(axis) for t in tensors]
        return cls.concat(tensors, axis=axis)


class FixedTensor(RingTensor):
    """Plaintext fixed-point tensor used by the reference engine."""

    lead = 0

    def __repr__(self) -> str:
        return f"FixedTensor(shape={self.shape}, scale={self.scale})"


class FloatTensor(RingTensor):
    """Unrounded twin of FixedTensor: float64 data holding value * 2^scale."""

    lead = 0

    def __init__(self, data: np.ndarray, scale: int):
        self.data = np.asarray(data, dtype=np.float64)
        self.scale = int(scale)

    def sum(self, axis: int = -1, keepdims: bool = False) -> "FloatTensor":
        return self._wrap(np.sum(self.data, axis=axis, keepdims=keepdims))

    def __repr__(self) -> str:
        return f"FloatTensor(shape={self.shape}, scale={self.scale})"
