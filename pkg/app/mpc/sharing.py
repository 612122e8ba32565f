"""2-out-of-3 replicated secret sharing over the 64-bit ring.

A secret x is split into summands s1 + s2 + s3 = x (mod 2^64). Party Pi holds
the pair (s_i, s_{i+1}) with cyclic indices, so any two parties can rebuild x
while a single party sees two uniformly random words.

In code parties are indexed 0..2; ``SharedTensor.data`` has shape
``(3, 2, *shape)`` where ``data[i, 0]`` is the first and ``data[i, 1]`` the
second summand held by party i.
"""

import logging
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ScaleError, ShapeError, ShareCorruptionError
from ..core.ring import RING_DTYPE, RingTensor, as_ring, broadcast_shape

logger = logging.getLogger(__name__)

PublicOperand = Union[int, np.ndarray]


class SharedTensor(RingTensor):
    """Tensor of replicated shares with a tracked fixed-point scale."""

    lead = 2

    def __init__(self, data: np.ndarray, scale: int):
        super().__init__(data, scale)
        if self.data.shape[:2] != (3, 2):
            raise ShapeError(f"share data must start with (3, 2), got {self.data.shape[:2]}")

    @classmethod
    def from_summands(cls, summands: np.ndarray, scale: int) -> "SharedTensor":
        """Build the replicated layout from the three summands stacked on axis 0."""
        summands = np.asarray(summands, dtype=RING_DTYPE)
        data = np.stack([np.stack([summands[i], summands[(i + 1) % 3]]) for i in range(3)])
        return cls(data, scale)

    @classmethod
    def public(cls, values: PublicOperand, scale: int) -> "SharedTensor":
        """Trivial sharing of a public ring tensor: summand 1 carries the value."""
        values = as_ring(values)
        summands = np.zeros((3,) + values.shape, dtype=RING_DTYPE)
        summands[0] = values
        return cls.from_summands(summands, scale)

    def party(self, i: int) -> np.ndarray:
        """The (2, *shape) pair held by party i."""
        return self.data[i]

    def summands(self) -> np.ndarray:
        """The three summands; only reconstruction-side code should call this."""
        return np.stack([self.data[0, 0], self.data[1, 0], self.data[2, 0]])

    def __repr__(self) -> str:
        return f"SharedTensor(shape={self.shape}, scale={self.scale})"


def share(secret: PublicOperand, randomness: Tuple[PublicOperand, PublicOperand],
          scale: int = 0) -> SharedTensor:
    """Split ``secret`` into summands (r1, r2, secret - r1 - r2).

    >>> share(42, (10, 20)).party(0).tolist()
    [10, 20]
    """
    secret = as_ring(secret)
    r1 = np.broadcast_to(as_ring(randomness[0]), secret.shape)
    r2 = np.broadcast_to(as_ring(randomness[1]), secret.shape)
    return SharedTensor.from_summands(np.stack([r1, r2, secret - r1 - r2]), scale)


def share_random(secret: PublicOperand, rng: np.random.Generator, scale: int = 0) -> SharedTensor:
    """Share with fresh uniform randomness drawn from ``rng``."""
    secret = as_ring(secret)
    raw = rng.bit_generator.random_raw(2 * secret.size).astype(RING_DTYPE)
    r1, r2 = raw.reshape((2,) + secret.shape)
    return share(secret, (r1, r2), scale)


def reconstruct(first: Tuple[int, np.ndarray], second: Tuple[int, np.ndarray]) -> np.ndarray:
    """Rebuild the secret from two parties' pairs.

    Each argument is ``(party_index, pair)`` with ``pair`` shaped ``(2, ...)``.
    The summand both parties hold must agree, otherwise ShareCorruptionError.
    """
    (i, pair_i), (j, pair_j) = first, second
    if i == j:
        raise ShareCorruptionError("reconstruction needs two distinct parties")
    pair_i = as_ring(pair_i)
    pair_j = as_ring(pair_j)
    if (j - i) % 3 == 2:
        (i, pair_i), (j, pair_j) = (j, pair_j), (i, pair_i)
    # now j == i + 1: Pi holds (s_i, s_{i+1}), Pj holds (s_{i+1}, s_{i+2})
    if not np.array_equal(pair_i[1], pair_j[0]):
        raise ShareCorruptionError(f"P{i + 1} and P{j + 1} disagree on their common summand")
    return pair_i[0] + pair_i[1] + pair_j[1]


def open_shared(x: SharedTensor) -> np.ndarray:
    """Reconstruct locally from a full tensor, cross-checking every overlap."""
    for i in range(3):
        if not np.array_equal(x.data[i, 1], x.data[(i + 1) % 3, 0]):
            raise ShareCorruptionError(f"P{i + 1} and P{(i + 1) % 3 + 1} disagree on their common summand")
    return reconstruct((0, x.data[0]), (1, x.data[1]))


class LinearOp(str, Enum):
    """Communication-free operations on shares."""
    ADD_SHARED = "add_shared"
    SUB_SHARED = "sub_shared"
    ADD_PUBLIC = "add_public"
    MUL_PUBLIC = "mul_public"


def _align(a: SharedTensor, b_shape: Tuple[int, ...]) -> Tuple[int, ...]:
    return broadcast_shape(a.shape, b_shape)


def local_linear(op: Union[LinearOp, str], a: SharedTensor, b: Union[SharedTensor, PublicOperand],
                 public_scale: Optional[int] = None) -> SharedTensor:
    """Per-party arithmetic on share pairs; never touches the network.

    ``add_shared``/``sub_shared`` need equal scales. ``add_public`` adds a ring
    tensor already encoded at ``a.scale`` to summand 1. ``mul_public`` multiplies
    by a public ring tensor of scale ``public_scale`` (default 0) and the result
    carries ``a.scale + public_scale``.
    """
    op = LinearOp(op)
    if op in (LinearOp.ADD_SHARED, LinearOp.SUB_SHARED):
        if not isinstance(b, SharedTensor):
            raise ShapeError(f"{op.value} needs two shared operands")
        if a.scale != b.scale:
            raise ScaleError(f"cannot combine scales {a.scale} and {b.scale}")
        _align(a, b.shape)
        data = a.data + b.data if op is LinearOp.ADD_SHARED else a.data - b.data
        return SharedTensor(data, a.scale)

    public = as_ring(b)
    shape = _align(a, public.shape)
    if op is LinearOp.ADD_PUBLIC:
        data = np.broadcast_to(a.data, (3, 2) + shape).copy()
        # summand 1 lives at P1 slot 0 and P3 slot 1
        data[0, 0] += np.broadcast_to(public, shape)
        data[2, 1] += np.broadcast_to(public, shape)
        return SharedTensor(data, a.scale)
    return SharedTensor(a.data * public, a.scale + (public_scale or 0))


def lift_pair(values: Sequence[np.ndarray], scale: int) -> SharedTensor:
    """Assemble a SharedTensor from per-party pairs ``[(s1, s2), (s2, s3), (s3, s1)]``."""
    return SharedTensor(np.stack([np.stack(list(pair)) for pair in values]).astype(RING_DTYPE), scale)
