"""Interactive sub-protocols over replicated shares.

``SecureOps`` is the arithmetic backend the transformer kernels run on inside a
session. The plaintext fixed-point backend in ``app.reference.engine`` exposes
the same methods, so every kernel has a bit-for-bit comparable oracle.

Protocols provided here:
- multiplication (replicated resharing, or Beaver triples from a TripleStore)
- truncation by any number of bits
- less-than via arithmetic-to-binary conversion and a ripple or Kogge-Stone adder
- selection, tournament max / argmax
- exp, reciprocal and inverse square root approximations
"""

import logging
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ScaleError, ShapeError, ShareCorruptionError, TripleExhaustedError
from ..core.ring import RING_DTYPE, RingTensor, arithmetic_shift, as_ring, broadcast_shape, decode_fixed, encode_fixed
from ..core.types import AdderKind, FixedPointConfig, MulBackend, Opcode, Phase
from .network import Message, Session
from .sharing import LinearOp, SharedTensor, local_linear, share_random

logger = logging.getLogger(__name__)

EXP_GUARD_BITS = 4
EXP_SQUARINGS = 8
EXP_MAX_WORK_SCALE = 25
RECIPROCAL_ITERS = 12
RSQRT_ITERS = 10

WORD_BITS = 64
ONE = np.uint64(1)


class TensorOps(Protocol):
    """Arithmetic backend shared by the secure engine and the fixed-point oracle."""

    fixed_point: FixedPointConfig
    mul_elements: int

    @property
    def frac(self) -> int: ...
    def public(self, values: np.ndarray, scale: Optional[int] = None) -> RingTensor: ...
    def input(self, owner: int, values: np.ndarray, scale: Optional[int] = None) -> RingTensor: ...
    def add(self, x: RingTensor, y: RingTensor) -> RingTensor: ...
    def sub(self, x: RingTensor, y: RingTensor) -> RingTensor: ...
    def neg(self, x: RingTensor) -> RingTensor: ...
    def add_public(self, x: RingTensor, c) -> RingTensor: ...
    def mul_public(self, x: RingTensor, c, frac: Optional[int] = None) -> RingTensor: ...
    def matmul_public(self, x: RingTensor, w: np.ndarray, frac: Optional[int] = None) -> RingTensor: ...
    def upscale(self, x: RingTensor, bits: int) -> RingTensor: ...
    def mul(self, x: RingTensor, y: RingTensor) -> RingTensor: ...
    def mul_many(self, pairs: Sequence[Tuple[RingTensor, RingTensor]]) -> List[RingTensor]: ...
    def matmul(self, x: RingTensor, y: RingTensor) -> RingTensor: ...
    def trunc(self, x: RingTensor, bits: Optional[int] = None) -> RingTensor: ...
    def less_than(self, x: RingTensor, y: RingTensor) -> RingTensor: ...
    def select(self, b: RingTensor, x: RingTensor, y: RingTensor) -> RingTensor: ...
    def select_many(self, b: RingTensor, pairs: Sequence[Tuple[RingTensor, RingTensor]]) -> List[RingTensor]: ...
    def reveal(self, x: RingTensor, to: Optional[int] = None) -> np.ndarray: ...
    def concat(self, tensors: Sequence[RingTensor], axis: int = -1) -> RingTensor: ...
    def phase(self, phase: Phase): ...
    def approx(self, kind: str, x: RingTensor) -> RingTensor: ...

def _pad_shape(a: RingTensor, b: RingTensor) -> Tuple[int, ...]:
    return broadcast_shape(a.shape, b.shape)


def _trunc_bits(x: RingTensor, frac: int, bits: Optional[int]) -> int:
    if bits is None:
        bits = x.scale - frac
    if bits < 0:
        raise ScaleError(f"cannot truncate scale {x.scale} by {bits} bits")
    return bits


class BinaryShare(SharedTensor):
    """XOR-replicated 64-bit words; party i holds (w_i, w_{i+1}) and w1 ^ w2 ^ w3 is the plaintext."""

    def __xor__(self, other: "BinaryShare") -> "BinaryShare":
        return BinaryShare(self.data ^ other.data, 0)

    def __and__(self, mask: Union[int, np.ndarray]) -> "BinaryShare":
        return BinaryShare(self.data & as_ring(mask), 0)

    def __lshift__(self, k: int) -> "BinaryShare":
        return BinaryShare(self.data << np.uint64(k), 0)

    def __rshift__(self, k: int) -> "BinaryShare":
        return BinaryShare(self.data >> np.uint64(k), 0)


class TripleStore:
    """Multiplication triples dealt by a trusted local dealer.

    Triples are dealt in batches per shape and each one is handed out at most once.
    """

    def __init__(self, rng: np.random.Generator, capacity: Optional[int] = None):
        self.rng = rng
        self.capacity = capacity
        self._pool: Dict[Tuple[str, Tuple[int, ...], Tuple[int, ...]], List[Tuple[SharedTensor, ...]]] = {}
        self.dealt = 0
        self.consumed = 0

    def _deal(self, kind: str, shape_a: Tuple[int, ...], shape_b: Tuple[int, ...]) -> Tuple[SharedTensor, ...]:
        n_a = int(np.prod(shape_a, dtype=np.int64))
        n_b = int(np.prod(shape_b, dtype=np.int64))
        a = self.rng.bit_generator.random_raw(n_a).astype(RING_DTYPE).reshape(shape_a)
        b = self.rng.bit_generator.random_raw(n_b).astype(RING_DTYPE).reshape(shape_b)
        c = a * b if kind == "mul" else np.matmul(a, b)
        self.dealt += 1
        return share_random(a, self.rng), share_random(b, self.rng), share_random(c, self.rng)

    def fill(self, kind: str, shape_a: Tuple[int, ...], shape_b: Tuple[int, ...], count: int) -> None:
        key = (kind, tuple(shape_a), tuple(shape_b))
        self._pool.setdefault(key, []).extend(self._deal(kind, shape_a, shape_b) for _ in range(count))

    def take(self, kind: str, shape_a: Tuple[int, ...], shape_b: Tuple[int, ...]) -> Tuple[SharedTensor, ...]:
        key = (kind, tuple(shape_a), tuple(shape_b))
        pool = self._pool.get(key)
        if not pool:
            if self.capacity is not None and self.dealt >= self.capacity:
                raise TripleExhaustedError(f"no {kind} triple left for shapes {shape_a} x {shape_b}")
            self.fill(kind, shape_a, shape_b, 1)
            pool = self._pool[key]
        self.consumed += 1
        return pool.pop()

    @property
    def available(self) -> int:
        return sum(len(v) for v in self._pool.values())


class SecureOps:
    """Secure arithmetic on SharedTensors inside an established session."""

    def __init__(self, session: Session):
        self.session = session
        self.fixed_point = session.fixed_point
        if session.config.mul_backend is MulBackend.TRIPLES and session.triples is None:
            session.triples = TripleStore(session.dealer_rng)

    @property
    def frac(self) -> int:
        return self.fixed_point.fractional_bits

    @property
    def mul_elements(self) -> int:
        return self.session.stats.mul_elements

    def phase(self, phase: Phase):
        return self.session.phase(phase)

    def encode(self, values, scale: Optional[int] = None) -> np.ndarray:
        return encode_fixed(values, self.fixed_point, self.frac if scale is None else scale)

    # -------------------- local --------------------
    def public(self, values, scale: Optional[int] = None) -> SharedTensor:
        scale = self.frac if scale is None else scale
        return SharedTensor.public(self.encode(values, scale), scale)

    def add(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return local_linear(LinearOp.ADD_SHARED, x, y)

    def sub(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return local_linear(LinearOp.SUB_SHARED, x, y)

    def neg(self, x: SharedTensor) -> SharedTensor:
        return SharedTensor(np.zeros_like(x.data) - x.data, x.scale)

    def add_public(self, x: SharedTensor, c) -> SharedTensor:
        return local_linear(LinearOp.ADD_PUBLIC, x, self.encode(c, x.scale))

    def mul_public(self, x: SharedTensor, c, frac: Optional[int] = None) -> SharedTensor:
        frac = self.frac if frac is None else frac
        return local_linear(LinearOp.MUL_PUBLIC, x, self.encode(c, frac), public_scale=frac)

    def matmul_public(self, x: SharedTensor, w: np.ndarray, frac: Optional[int] = None) -> SharedTensor:
        frac = self.frac if frac is None else frac
        w = np.asarray(w)
        if x.shape[-1] != w.shape[0]:
            raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")
        return SharedTensor(np.matmul(x.data, self.encode(w, frac)), x.scale + frac)

    def upscale(self, x: SharedTensor, bits: int) -> SharedTensor:
        return SharedTensor(x.data << np.uint64(bits), x.scale + bits)

    def concat(self, tensors: Sequence[SharedTensor], axis: int = -1) -> SharedTensor:
        return SharedTensor.concat(tensors, axis=axis)

    # -------------------- input / output --------------------
    def input_ring(self, owner: int, values: np.ndarray, scale: int) -> SharedTensor:
        """Owner shares a ring tensor it holds; costs one frame (owner to the party lacking its summand)."""
        values = as_ring(values)
        r = self.session.pair_random(owner, values.shape)
        summands = np.zeros((3,) + values.shape, dtype=RING_DTYPE)
        summands[owner] = values - r
        summands[(owner + 1) % 3] = r
        lacking = (owner + 2) % 3
        with self.session.phase(Phase.SHARE_INPUT):
            got = self.session.exchange([Message(owner, lacking, summands[owner])], Opcode.INPUT)
        summands[owner] = got[(owner, lacking)]
        return SharedTensor.from_summands(summands, scale)

    def input(self, owner: int, values, scale: Optional[int] = None) -> SharedTensor:
        scale = self.frac if scale is None else scale
        return self.input_ring(owner, self.encode(values, scale), scale)

    def _open_many(self, tensors: Sequence[SharedTensor], opcode: Opcode,
                   to: Optional[int] = None) -> List[np.ndarray]:
        """Reconstruct tensors; party i receives the summand it lacks from party i+1."""
        receivers = range(3) if to is None else [to]
        flat = [t.data.reshape(3, 2, -1) for t in tensors]
        messages = [Message((i + 1) % 3, i, np.concatenate([f[(i + 1) % 3, 1] for f in flat]))
                    for i in receivers]
        got = self.session.exchange(messages, opcode)
        results = []
        offset = 0
        for t, f in zip(tensors, flat):
            n = f.shape[-1]
            views = []
            for i in receivers:
                missing = got[((i + 1) % 3, i)][offset:offset + n]
                views.append(f[i, 0] + f[i, 1] + missing)
            for v in views[1:]:
                if not np.array_equal(v, views[0]):
                    raise ShareCorruptionError("parties reconstructed different values")
            results.append(views[0].reshape(t.shape))
            offset += n
        return results

    def reveal_ring(self, x: SharedTensor, to: Optional[int] = None) -> np.ndarray:
        with self.session.phase(Phase.OUTPUT):
            value = self._open_many([x], Opcode.REVEAL, to=to)[0]
        self.session.reveal_count += 1
        return value

    def reveal(self, x: SharedTensor, to: Optional[int] = None) -> np.ndarray:
        """Open ``x`` to every party (three frames) or to party ``to`` only (one frame)."""
        return decode_fixed(self.reveal_ring(x, to), self.fixed_point, x.scale)

    # -------------------- multiplication --------------------
    def _reshare(self, local: List[np.ndarray], opcode: Opcode) -> np.ndarray:
        """Turn 3-out-of-3 summands z_i into replicated pairs; party i+1 sends z_{i+1} to party i."""
        alpha = self.session.zero_sharing(local[0].shape, boolean=opcode is Opcode.AND)
        if opcode is Opcode.AND:
            z = [local[i] ^ alpha[i] for i in range(3)]
        else:
            z = [local[i] + alpha[i] for i in range(3)]
        got = self.session.exchange([Message((i + 1) % 3, i, z[(i + 1) % 3]) for i in range(3)], opcode)
        return np.stack([np.stack([z[i], got[((i + 1) % 3, i)]]) for i in range(3)])

    @staticmethod
    def _cross_terms(x: np.ndarray, y: np.ndarray, i: int, matmul: bool = False) -> np.ndarray:
        op = np.matmul if matmul else np.multiply
        return op(x[i, 0], y[i, 0]) + op(x[i, 0], y[i, 1]) + op(x[i, 1], y[i, 0])

    def mul_many(self, pairs: Sequence[Tuple[SharedTensor, SharedTensor]]) -> List[SharedTensor]:
        """Elementwise products of several pairs in a single round."""
        if self.session.config.mul_backend is MulBackend.TRIPLES:
            return self._mul_triples(pairs)
        shapes, scales, parts = [], [], [[], [], []]
        for x, y in pairs:
            shape = _pad_shape(x, y)
            xd = np.broadcast_to(x.data, (3, 2) + shape)
            yd = np.broadcast_to(y.data, (3, 2) + shape)
            for i in range(3):
                parts[i].append(self._cross_terms(xd, yd, i).reshape(-1))
            shapes.append(shape)
            scales.append(x.scale + y.scale)
        local = [np.concatenate(p) if p else np.zeros(0, dtype=RING_DTYPE) for p in parts]
        with self.session.phase(Phase.MUL):
            joined = self._reshare(local, Opcode.MUL)
        self.session.stats.mul_elements += local[0].size
        return self._split(joined, shapes, scales)

    @staticmethod
    def _split(joined: np.ndarray, shapes: List[Tuple[int, ...]], scales: List[int]) -> List[SharedTensor]:
        out, offset = [], 0
        for shape, scale in zip(shapes, scales):
            n = int(np.prod(shape, dtype=np.int64))
            out.append(SharedTensor(joined[:, :, offset:offset + n].reshape((3, 2) + shape), scale))
            offset += n
        return out

    def mul(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return self.mul_many([(x, y)])[0]

    def matmul(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        """Shared-by-shared matrix product over the last two axes, one round."""
        if x.shape[-1] != y.shape[-2 if y.ndim > 1 else 0]:
            raise ShapeError(f"cannot multiply {x.shape} by {y.shape}")
        if self.session.config.mul_backend is MulBackend.TRIPLES:
            return self._matmul_triple(x, y)
        local = [self._cross_terms(x.data, y.data, i, matmul=True) for i in range(3)]
        shape = local[0].shape
        with self.session.phase(Phase.MUL):
            joined = self._reshare([z.reshape(-1) for z in local], Opcode.MATMUL)
        self.session.stats.mul_elements += local[0].size
        return SharedTensor(joined.reshape((3, 2) + shape), x.scale + y.scale)

    def _mul_triples(self, pairs: Sequence[Tuple[SharedTensor, SharedTensor]]) -> List[SharedTensor]:
        store: TripleStore = self.session.triples
        prepared, masked = [], []
        for x, y in pairs:
            shape = _pad_shape(x, y)
            xb, yb = x.broadcast_to(shape), y.broadcast_to(shape)
            a, b, c = store.take("mul", shape, shape)
            prepared.append((xb, yb, a, b, c))
            masked += [self.sub(xb.with_scale(0), a), self.sub(yb.with_scale(0), b)]
        with self.session.phase(Phase.MUL):
            opened = self._open_many(masked, Opcode.TRIPLE_OPEN)
        out = []
        for k, (xb, yb, a, b, c) in enumerate(prepared):
            e, d = opened[2 * k], opened[2 * k + 1]
            z = self.add(self.add(c, SharedTensor(b.data * e, 0)), SharedTensor(a.data * d, 0))
            z = local_linear(LinearOp.ADD_PUBLIC, z, e * d)
            out.append(z.with_scale(xb.scale + yb.scale))
            self.session.stats.mul_elements += e.size
        return out

    def _matmul_triple(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        a, b, c = self.session.triples.take("matmul", x.shape, y.shape)
        with self.session.phase(Phase.MUL):
            e, d = self._open_many([self.sub(x.with_scale(0), a), self.sub(y.with_scale(0), b)],
                                   Opcode.TRIPLE_OPEN)
        z = self.add(c, SharedTensor(np.matmul(e, b.data), 0))
        z = self.add(z, SharedTensor(np.matmul(a.data, d), 0))
        z = local_linear(LinearOp.ADD_PUBLIC, z, np.matmul(e, d))
        self.session.stats.mul_elements += c.size
        return z.with_scale(x.scale + y.scale)

    # -------------------- truncation --------------------
    def trunc(self, x: SharedTensor, bits: Optional[int] = None) -> SharedTensor:
        """Divide by 2^bits with error in {-1, 0} ulp.

        P1 shifts s1; P2 shifts s2 + s3, subtracts a mask shared with P3 and
        sends the result to P1. Fails with probability about |x| / 2^64.
        """
        bits = _trunc_bits(x, self.frac, bits)
        if bits == 0:
            return x
        s = x.data
        y0 = arithmetic_shift(s[0, 0], bits)
        r = self.session.pair_random(1, x.shape)
        y1 = arithmetic_shift(s[1, 0] + s[1, 1], bits) - r
        with self.session.phase(Phase.TRUNC):
            got = self.session.exchange([Message(1, 0, y1)], Opcode.TRUNC)
        y1 = got[(1, 0)]
        data = np.stack([np.stack([y0, y1]), np.stack([y1, r]), np.stack([r, y0])])
        return SharedTensor(data, x.scale - bits)

    # -------------------- boolean circuits --------------------
    def and_many(self, pairs: Sequence[Tuple[BinaryShare, BinaryShare]]) -> List[BinaryShare]:
        shapes = [_pad_shape(a, b) for a, b in pairs]
        parts = [[], [], []]
        for (a, b), shape in zip(pairs, shapes):
            ad = np.broadcast_to(a.data, (3, 2) + shape)
            bd = np.broadcast_to(b.data, (3, 2) + shape)
            for i in range(3):
                z = (ad[i, 0] & bd[i, 0]) ^ (ad[i, 0] & bd[i, 1]) ^ (ad[i, 1] & bd[i, 0])
                parts[i].append(z.reshape(-1))
        local = [np.concatenate(p) for p in parts]
        joined = self._reshare(local, Opcode.AND)
        return [BinaryShare(t.data, 0) for t in self._split(joined, shapes, [0] * len(shapes))]

    @staticmethod
    def _summand_words(d: SharedTensor) -> List[BinaryShare]:
        """XOR sharings of each arithmetic summand, built locally by the parties holding it."""
        words = []
        for j in range(3):
            summands = np.zeros((3,) + d.shape, dtype=RING_DTYPE)
            summands[j] = d.data[j, 0]
            words.append(BinaryShare(SharedTensor.from_summands(summands, 0).data, 0))
        return words

    def _sign_bits(self, d: SharedTensor) -> BinaryShare:
        """XOR-shared most significant bit of d (bit 0 of each word)."""
        a, b, c = self._summand_words(d)
        s = a ^ b ^ c
        u, v = self.and_many([(a, b), (c, a ^ b)])
        k = (u ^ v) << 1
        g = self.and_many([(s, k)])[0]
        p = s ^ k
        if self.session.config.adder is AdderKind.KOGGE_STONE:
            gg, pp = g, p
            shift = 1
            while shift < WORD_BITS:
                t, pp_next = self.and_many([(pp, gg << shift), (pp, pp << shift)])
                gg, pp = gg ^ t, pp_next
                shift *= 2
            carry = gg << 1
        else:
            carry = (g & 1) << 1
            for i in range(1, WORD_BITS - 1):
                bit = np.uint64(1) << np.uint64(i)
                t = self.and_many([(p & bit, carry)])[0]
                carry = ((g & bit) ^ t) << 1
        return (p ^ carry) >> 63

    def _bit_to_arith(self, bit: BinaryShare) -> SharedTensor:
        """b1 ^ b2 ^ b3 as an arithmetic 0/1 share: P1 inputs b1 ^ b2, then one multiplication."""
        u = self.input_ring(0, bit.data[0, 0] ^ bit.data[0, 1], 0)
        summands = np.zeros((3,) + bit.shape, dtype=RING_DTYPE)
        summands[2] = bit.data[1, 1]
        b3 = SharedTensor.from_summands(summands, 0)
        prod = self.mul(u, b3)
        total = self.add(u, b3)
        return self.sub(total, SharedTensor(prod.data << ONE, 0))

    def less_than(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        """Secret bit [x < y] at scale 0; requires |x - y| < 2^62."""
        if x.scale != y.scale:
            raise ScaleError(f"cannot compare scales {x.scale} and {y.scale}")
        shape = _pad_shape(x, y)
        d = self.sub(x.broadcast_to(shape), y.broadcast_to(shape))
        with self.session.phase(Phase.COMPARE):
            return self._bit_to_arith(self._sign_bits(d))

    # -------------------- selection --------------------
    def select_many(self, b: SharedTensor, pairs: Sequence[Tuple[SharedTensor, SharedTensor]]) -> List[SharedTensor]:
        return select_by_bits(self, b, pairs)

    def select(self, b: SharedTensor, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return self.select_many(b, [(x, y)])[0]

    def approx(self, kind: str, x: SharedTensor) -> SharedTensor:
        return APPROXIMATIONS[kind](self, x)


def select_by_bits(ops: "TensorOps", b: RingTensor, pairs) -> List[RingTensor]:
    """b * (x - y) + y for each pair, all products in one round."""
    if b.scale != 0:
        raise ScaleError("selection bits must be at scale 0")
    products = []
    for x, y in pairs:
        if x.scale != y.scale:
            raise ScaleError(f"cannot select between scales {x.scale} and {y.scale}")
        diff = ops.sub(x, y)
        bb = b
        while bb.ndim < diff.ndim:
            bb = bb.expand_dims(-1)
        products.append((bb.broadcast_to(diff.shape), diff))
    return [ops.add(y, p) for (x, y), p in zip(pairs, ops.mul_many(products))]


# -------------------- module-level entry points --------------------
def mul_protocol(ops: TensorOps, x: RingTensor, y: RingTensor) -> RingTensor:
    return ops.mul(x, y)


def trunc_protocol(ops: TensorOps, x: RingTensor, bits: Optional[int] = None) -> RingTensor:
    return ops.trunc(x, bits)


def less_than_protocol(ops: TensorOps, x: RingTensor, y: RingTensor) -> RingTensor:
    return ops.less_than(x, y)


def select_protocol(ops: TensorOps, b: RingTensor, x: RingTensor, y: RingTensor) -> RingTensor:
    return ops.select(b, x, y)


def max_protocol(ops: TensorOps, v: RingTensor, axis: int = -1, with_onehot: bool = False):
    """Tournament maximum along ``axis``.

    With ``with_onehot`` also returns a one-hot (scale 0) tensor marking the
    winning position; ties resolve to the lowest index.
    """
    v = v.moveaxis(axis, -1)
    n = v.shape[-1]
    if n == 0:
        raise ShapeError("max over an empty axis")
    onehot = None
    if with_onehot:
        eye = np.broadcast_to(np.eye(n, dtype=np.int64), v.shape + (n,))
        onehot = ops.public(eye, scale=0)
    while v.shape[-1] > 1:
        m = v.shape[-1] // 2
        left, right = v[..., 0:2 * m:2], v[..., 1:2 * m:2]
        bit = ops.less_than(left, right)
        if onehot is None:
            (winner,) = ops.select_many(bit, [(right, left)])
        else:
            winner, hot = ops.select_many(bit, [(right, left),
                                                (onehot[..., 1:2 * m:2, :], onehot[..., 0:2 * m:2, :])])
            if v.shape[-1] % 2:
                hot = ops.concat([hot, onehot[..., -1:, :]], axis=-2)
            onehot = hot
        if v.shape[-1] % 2:
            winner = ops.concat([winner, v[..., -1:]], axis=-1)
        v = winner
    if with_onehot:
        return v[..., 0], onehot[..., 0, :]
    return v[..., 0]


def argmax_protocol(ops: TensorOps, v: RingTensor, axis: int = -1) -> Tuple[RingTensor, RingTensor]:
    """Shared winning index (scale 0) and its one-hot vector."""
    _, onehot = max_protocol(ops, v, axis=axis, with_onehot=True)
    index = ops.mul_public(onehot, np.arange(onehot.shape[-1]), frac=0).sum(-1)
    return index, onehot


def exp_limit(ops: TensorOps, x: RingTensor, squarings: int = EXP_SQUARINGS) -> RingTensor:
    """(1 + x / 2^k)^(2^k) by k squarings at working scale min(scale + 4, 25)."""
    work = min(x.scale + EXP_GUARD_BITS, EXP_MAX_WORK_SCALE)
    t = ops.trunc(x, x.scale + squarings - work)
    y = ops.add_public(t.with_scale(work), 1.0)
    for _ in range(squarings):
        y = ops.trunc(ops.mul(y, y), y.scale)
    if work >= x.scale:
        return ops.trunc(y, work - x.scale)
    return ops.upscale(y, x.scale - work)


def reciprocal_newton(ops: TensorOps, x: RingTensor, iterations: int = RECIPROCAL_ITERS) -> RingTensor:
    """Newton steps y <- y(2 - xy) from y0 = 3 exp(1/2 - x) + 0.003."""
    e = exp_limit(ops, ops.add_public(ops.neg(x), 0.5))
    y = ops.add_public(ops.mul_public(e, 3, frac=0), 0.003)
    for _ in range(iterations):
        xy = ops.trunc(ops.mul(x, y))
        y = ops.trunc(ops.mul(y, ops.add_public(ops.neg(xy), 2.0)))
    return y


def rsqrt_newton(ops: TensorOps, x: RingTensor, iterations: int = RSQRT_ITERS) -> RingTensor:
    """Newton steps y <- y(3/2 - (x/2) y^2) from y0 = 2 exp(-x/2) + 0.05."""
    half = ops.trunc(ops.mul_public(x, 0.5))
    e = exp_limit(ops, ops.neg(half))
    y = ops.add_public(ops.mul_public(e, 2, frac=0), 0.05)
    for _ in range(iterations):
        y2 = ops.trunc(ops.mul(y, y))
        t = ops.trunc(ops.mul(half, y2))
        y = ops.trunc(ops.mul(y, ops.add_public(ops.neg(t), 1.5)))
    return y


APPROXIMATIONS = {"exp": exp_limit, "reciprocal": reciprocal_newton, "rsqrt": rsqrt_newton}


def elementary_approx(ops: TensorOps, kind: str, x: RingTensor) -> RingTensor:
    """exp, reciprocal or rsqrt of a scale-f tensor.

    Domains: exp [-16, 4]; reciprocal and rsqrt [2^-4, 2^8]. Outside them the
    result is unspecified.
    """
    if kind not in APPROXIMATIONS:
        raise ValueError(f"unknown approximation {kind!r}; expected one of {sorted(APPROXIMATIONS)}")
    if x.scale != ops.frac:
        raise ScaleError(f"{kind} expects scale {ops.frac}, got {x.scale}")
    return ops.approx(kind, x)
