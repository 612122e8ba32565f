"""Transformer kernels and the secure inference driver.

Every kernel takes a ``TensorOps`` backend first, so the same code runs over
replicated shares (``SecureOps``), over plaintext fixed point and over
unrounded floats (``app.reference.engine``).

Weights are public arrays by default. After ``share_weights`` they are
RingTensors and linear layers switch to the interactive matmul.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Iterator, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from ..core.errors import CapacityError, RangeError, ShapeError, ValidationError
from ..core.hashing import hash_arrays
from ..core.ring import RingTensor
from ..core.types import GeluMode, ModelConfig, Phase
from ..reference.functions import (
    GELU_MID_SLOPE, GELU_OFFSET, GELU_POLY_HALF_WIDTH, GELU_THRESHOLDS, gelu_polynomial_coefficients,
)
from .protocols import TensorOps, argmax_protocol, elementary_approx, max_protocol

logger = logging.getLogger(__name__)

Weight = Union[np.ndarray, RingTensor]

MASK_VALUE = -64.0

# party indices of the input owners
UAV_NODE = 0
OPERATOR_STATION = 1


@dataclass
class LayerWeights:
    ln1_gamma: Weight
    ln1_beta: Weight
    w_q: Weight
    w_k: Weight
    w_v: Weight
    w_o: Weight
    ln2_gamma: Weight
    ln2_beta: Weight
    w_1: Weight
    b_1: Weight
    w_2: Weight
    b_2: Weight

    @cached_property
    def w_qkv(self) -> Weight:
        parts = [self.w_q, self.w_k, self.w_v]
        if isinstance(self.w_q, RingTensor):
            return type(self.w_q).concat(parts, axis=-1)
        return np.concatenate(parts, axis=-1)

    def tensors(self) -> List[Weight]:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class ModelWeights:
    """Parameters in file order: embeddings, per-layer tensors, output head."""

    config: ModelConfig
    token_emb: Weight
    pos_emb: Weight
    layers: List[LayerWeights] = field(default_factory=list)
    head: Weight = None

    @property
    def shared(self) -> bool:
        return isinstance(self.head, RingTensor)

    def tensors(self) -> Iterator[Weight]:
        yield self.token_emb
        yield self.pos_emb
        for layer in self.layers:
            yield from layer.tensors()
        yield self.head

    def expected_shapes(self) -> List[Tuple[int, ...]]:
        cfg = self.config
        d, ff = cfg.d_model, cfg.ffn_width
        layer = [(d,), (d,), (d, d), (d, d), (d, d), (d, d), (d,), (d,), (d, ff), (ff,), (ff, d), (d,)]
        return [(cfg.vocab_size, d), (cfg.max_seq, d)] + layer * cfg.n_layers + [(d, cfg.vocab_size)]

    def validate(self) -> "ModelWeights":
        if len(self.layers) != self.config.n_layers:
            raise ShapeError(f"expected {self.config.n_layers} layers, got {len(self.layers)}")
        for tensor, shape in zip(self.tensors(), self.expected_shapes()):
            if tuple(tensor.shape) != shape:
                raise ShapeError(f"weight shape {tuple(tensor.shape)} does not match expected {shape}")
            if isinstance(tensor, np.ndarray) and not np.all(np.isfinite(tensor)):
                raise RangeError("weights must be finite")
        return self

    def digest(self) -> str:
        if self.shared:
            raise ValidationError("shared weights have no public digest")
        return hash_arrays(self.tensors())

    @classmethod
    def from_tensors(cls, config: ModelConfig, tensors: Sequence[Weight]) -> "ModelWeights":
        tensors = list(tensors)
        per_layer = len(fields(LayerWeights))
        expected = 3 + per_layer * config.n_layers
        if len(tensors) != expected:
            raise ShapeError(f"expected {expected} tensors, got {len(tensors)}")
        layers = [LayerWeights(*tensors[2 + i * per_layer: 2 + (i + 1) * per_layer]) for i in range(config.n_layers)]
        return cls(config, tensors[0], tensors[1], layers, tensors[-1]).validate()

    @classmethod
    def random(cls, config: ModelConfig, seed: int = 0) -> "ModelWeights":
        """Small random model with activations well inside the approximation domains."""
        rng = np.random.default_rng(seed)
        tensors = []
        for shape in cls(config, None, None).expected_shapes():
            if len(shape) == 2:
                tensors.append(rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape))
            else:
                tensors.append(rng.normal(0.0, 0.05, size=shape))
        per_layer = len(fields(LayerWeights))
        tensors[0] = rng.normal(0.0, 0.5, size=tensors[0].shape)
        tensors[1] = rng.normal(0.0, 0.1, size=tensors[1].shape)
        for i in range(config.n_layers):
            base = 2 + i * per_layer
            tensors[base] = 1.0 + tensors[base]
            tensors[base + 6] = 1.0 + tensors[base + 6]
        return cls.from_tensors(config, tensors)


def share_weights(ops: TensorOps, weights: ModelWeights, owner: int = OPERATOR_STATION) -> ModelWeights:
    """Input-share every parameter from ``owner``; linear layers then multiply interactively."""
    shared = [ops.input(owner, np.asarray(t)) for t in weights.tensors()]
    logger.info(f"Shared {len(shared)} weight tensors from P{owner + 1}")
    return ModelWeights.from_tensors(weights.config, shared)


# -------------------- helpers --------------------
def _scale_by(ops: TensorOps, x: RingTensor, g: Weight) -> RingTensor:
    if isinstance(g, RingTensor):
        return ops.trunc(ops.mul(x, g.broadcast_to(x.shape)))
    return ops.trunc(ops.mul_public(x, np.broadcast_to(g, x.shape)))


def _shift_by(ops: TensorOps, x: RingTensor, b: Weight) -> RingTensor:
    if isinstance(b, RingTensor):
        return ops.add(x, b.broadcast_to(x.shape))
    return ops.add_public(x, np.broadcast_to(b, x.shape))


def _split_heads(t: RingTensor, n_heads: int) -> RingTensor:
    d = t.shape[-1]
    return t.reshape(t.shape[:-1] + (n_heads, d // n_heads)).swapaxes(-2, -3)


def _merge_heads(t: RingTensor) -> RingTensor:
    t = t.swapaxes(-2, -3)
    return t.reshape(t.shape[:-2] + (t.shape[-2] * t.shape[-1],))


# -------------------- kernels --------------------
def mpc_linear(ops: TensorOps, x: RingTensor, w: Weight, b: Optional[Weight] = None) -> RingTensor:
    """x @ w + b accumulated at scale 2f and truncated once."""
    if x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"cannot apply a {tuple(w.shape)} projection to {x.shape}")
    with ops.phase(Phase.LINEAR):
        if isinstance(w, RingTensor):
            acc = ops.matmul(x, w)
        else:
            acc = ops.matmul_public(x, w)
        if b is not None:
            if isinstance(b, RingTensor):
                acc = ops.add(acc, ops.upscale(b, acc.scale - b.scale).broadcast_to(acc.shape))
            else:
                acc = ops.add_public(acc, np.broadcast_to(b, acc.shape))
        return ops.trunc(acc, acc.scale - ops.frac)


def mpc_layernorm(ops: TensorOps, x: RingTensor, gamma: Weight, beta: Weight, eps: float = 1e-5) -> RingTensor:
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError("layer norm needs a non-empty last axis")
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise ShapeError(f"gain/bias of width {gamma.shape[-1]} do not fit {x.shape}")
    d = x.shape[-1]
    with ops.phase(Phase.LAYERNORM):
        mean = ops.trunc(ops.mul_public(x.sum(-1), 1.0 / d))
        centred = ops.sub(x, mean.expand_dims(-1).broadcast_to(x.shape))
        var = ops.trunc(ops.mul_public(ops.trunc(ops.mul(centred, centred)).sum(-1), 1.0 / d))
        inv = elementary_approx(ops, "rsqrt", ops.add_public(var, eps))
        normed = ops.trunc(ops.mul(centred, inv.expand_dims(-1).broadcast_to(x.shape)))
        return _shift_by(ops, _scale_by(ops, normed, gamma), beta)


def mpc_gelu(ops: TensorOps, x: RingTensor, mode: GeluMode = GeluMode.PIECEWISE) -> RingTensor:
    """Piecewise-linear GELU: 0 | 0.5x | 0.8413x + 0.1587 | x - 0.1587 split at -3, -1, 1.

    All three comparisons run as one batched less-than, then the segments are
    combined as y4 + b3(y3 - y4) + b2(y2 - y3) + b1(y1 - y2) in one round.
    """
    if GeluMode(mode) is GeluMode.EXACT_REFERENCE:
        return mpc_gelu_polynomial(ops, x)
    with ops.phase(Phase.GELU):
        n = len(GELU_THRESHOLDS)
        stacked = x.expand_dims(0).broadcast_to((n,) + x.shape)
        cuts = np.broadcast_to(np.reshape(GELU_THRESHOLDS, (n,) + (1,) * x.ndim), (n,) + x.shape)
        bits = ops.less_than(stacked, ops.public(cuts, x.scale))
        below_lo, below_mid, below_hi = bits[0], bits[1], bits[2]

        scaled = ops.trunc(ops.concat([ops.mul_public(x, 0.5).expand_dims(0),
                                       ops.mul_public(x, GELU_MID_SLOPE).expand_dims(0)], axis=0))
        seg_zero = ops.public(np.zeros(x.shape), x.scale)
        seg_half = scaled[0]
        seg_mid = ops.add_public(scaled[1], GELU_OFFSET)
        seg_top = ops.add_public(x, -GELU_OFFSET)
        d_hi, d_mid, d_lo = ops.mul_many([
            (below_hi, ops.sub(seg_mid, seg_top)),
            (below_mid, ops.sub(seg_half, seg_mid)),
            (below_lo, ops.sub(seg_zero, seg_half)),
        ])
        return ops.add(ops.add(ops.add(seg_top, d_hi), d_mid), d_lo)


def mpc_gelu_polynomial(ops: TensorOps, x: RingTensor) -> RingTensor:
    """Degree-12 least-squares GELU on [-5, 5], Horner form in u = x / 5."""
    if getattr(ops, "exact_math", False):
        return ops.exact("gelu", x)
    coeffs = gelu_polynomial_coefficients()
    with ops.phase(Phase.GELU):
        u = ops.trunc(ops.mul_public(x, 1.0 / GELU_POLY_HALF_WIDTH))
        acc = ops.add_public(ops.trunc(ops.mul_public(u, coeffs[-1])), coeffs[-2])
        for c in reversed(coeffs[:-2]):
            acc = ops.add_public(ops.trunc(ops.mul(acc, u)), c)
        return acc


def mpc_softmax(ops: TensorOps, logits: RingTensor, temperature: float = 1.0,
                mask: Optional[np.ndarray] = None) -> RingTensor:
    """Stabilized softmax over the last axis; masked positions get -64 before division by T."""
    if logits.ndim < 1 or logits.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    with ops.phase(Phase.SOFTMAX):
        x = logits
        if mask is not None:
            try:
                mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
            except ValueError as exc:
                raise ShapeError(f"mask does not broadcast to {x.shape}") from exc
            x = ops.add_public(x, np.where(mask, MASK_VALUE, 0.0))
        if temperature != 1.0:
            x = ops.trunc(ops.mul_public(x, 1.0 / temperature))
        peak = max_protocol(ops, x, axis=-1)
        e = elementary_approx(ops, "exp", ops.sub(x, peak.expand_dims(-1).broadcast_to(x.shape)))
        inv = elementary_approx(ops, "reciprocal", e.sum(-1))
        return ops.trunc(ops.mul(e, inv.expand_dims(-1).broadcast_to(e.shape)))


def causal_mask(n_queries: int, n_keys: int) -> np.ndarray:
    """True where key j lies in the future of query i; queries are the last ``n_queries`` positions."""
    offset = n_keys - n_queries
    return np.arange(n_keys)[None, :] > np.arange(n_queries)[:, None] + offset


def mpc_attention(ops: TensorOps, q: RingTensor, k: RingTensor, v: RingTensor, n_heads: int,
                  w_o: Optional[Weight] = None, causal: bool = True, temperature: float = 1.0) -> RingTensor:
    if q.ndim < 2 or q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise ShapeError(f"incompatible attention operands q{q.shape} k{k.shape} v{v.shape}")
    if q.shape[-1] % n_heads:
        raise ShapeError(f"width {q.shape[-1]} does not split into {n_heads} heads")
    head_width = q.shape[-1] // n_heads
    with ops.phase(Phase.ATTENTION):
        qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
        scores = ops.trunc(ops.matmul(qh, kh.swapaxes(-1, -2)))
        scores = ops.trunc(ops.mul_public(scores, 1.0 / math.sqrt(head_width)))
        mask = causal_mask(q.shape[-2], k.shape[-2]) if causal else None
        probs = mpc_softmax(ops, scores, temperature, mask)
        out = _merge_heads(ops.trunc(ops.matmul(probs, vh)))
        if w_o is not None:
            out = mpc_linear(ops, out, w_o)
        return out


# -------------------- forward pass --------------------
@dataclass
class KVCache:
    """Per-layer keys and values kept in shared form across decoding steps."""

    capacity: int
    keys: List[Optional[RingTensor]] = field(default_factory=list)
    values: List[Optional[RingTensor]] = field(default_factory=list)
    length: int = 0

    def extend(self, ops: TensorOps, layer: int, k: RingTensor, v: RingTensor) -> Tuple[RingTensor, RingTensor]:
        while len(self.keys) <= layer:
            self.keys.append(None)
            self.values.append(None)
        if self.keys[layer] is not None:
            k = ops.concat([self.keys[layer], k], axis=-2)
            v = ops.concat([self.values[layer], v], axis=-2)
        if k.shape[-2] > self.capacity:
            raise CapacityError(f"cache holds {self.capacity} positions, {k.shape[-2]} requested")
        self.keys[layer], self.values[layer] = k, v
        return k, v


def secure_forward(ops: TensorOps, x: RingTensor, weights: ModelWeights,
                   cache: Optional[KVCache] = None) -> RingTensor:
    """Logits for embedded inputs ``x`` of shape (..., seq, d).

    Per layer: h = LN(h); h += Attn(h); h = LN(h); h += MLP(h). With a cache,
    ``x`` holds only the new positions and earlier keys/values are reused.
    """
    cfg = weights.config
    if x.ndim < 2 or x.shape[-1] != cfg.d_model:
        raise ShapeError(f"expected (..., seq, {cfg.d_model}) inputs, got {x.shape}")
    seq = x.shape[-2]
    start = cache.length if cache is not None else 0
    if start + seq > cfg.max_seq:
        raise CapacityError(f"{start + seq} positions exceed max_seq={cfg.max_seq}")
    d = cfg.d_model
    h = x
    for index, layer in enumerate(weights.layers):
        h = mpc_layernorm(ops, h, layer.ln1_gamma, layer.ln1_beta, cfg.layernorm_eps)
        qkv = mpc_linear(ops, h, layer.w_qkv)
        q, k, v = qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]
        if cache is not None:
            k, v = cache.extend(ops, index, k, v)
        h = ops.add(h, mpc_attention(ops, q, k, v, cfg.n_heads, layer.w_o, causal=True,
                                     temperature=cfg.temperature))
        h = mpc_layernorm(ops, h, layer.ln2_gamma, layer.ln2_beta, cfg.layernorm_eps)
        hidden = mpc_gelu(ops, mpc_linear(ops, h, layer.w_1, layer.b_1), cfg.gelu_mode)
        h = ops.add(h, mpc_linear(ops, hidden, layer.w_2, layer.b_2))
    if cache is not None:
        cache.length = start + seq
    return mpc_linear(ops, h, weights.head)


def _check_tokens(tokens: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim < 1 or tokens.shape[-1] < 1:
        raise ShapeError("token sequence must be non-empty")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValidationError(f"token ids must lie in [0, {cfg.vocab_size})")
    return tokens


def embed_onehot(ops: TensorOps, onehot: RingTensor, weights: ModelWeights, offset: int = 0) -> RingTensor:
    """Embeddings selected by a (..., n, V) one-hot at scale 0, positions from ``offset``."""
    n = onehot.shape[-2]
    if offset + n > weights.config.max_seq:
        raise CapacityError(f"position {offset + n} exceeds max_seq={weights.config.max_seq}")
    if isinstance(weights.token_emb, RingTensor):
        emb = ops.matmul(onehot, weights.token_emb)
        return ops.add(emb, weights.pos_emb[offset:offset + n].broadcast_to(emb.shape))
    emb = ops.matmul_public(onehot, weights.token_emb)
    return ops.add_public(emb, np.broadcast_to(weights.pos_emb[offset:offset + n], emb.shape))


def embed_tokens(ops: TensorOps, tokens: np.ndarray, weights: ModelWeights,
                 owner: int = UAV_NODE, offset: int = 0) -> RingTensor:
    """The token owner inputs E[tok] + P[pos] (or, with shared weights, a one-hot)."""
    cfg = weights.config
    tokens = _check_tokens(tokens, cfg)
    n = tokens.shape[-1]
    if offset + n > cfg.max_seq:
        raise CapacityError(f"{offset + n} positions exceed max_seq={cfg.max_seq}")
    if weights.shared:
        onehot = ops.input(owner, np.eye(cfg.vocab_size)[tokens], scale=0)
        return embed_onehot(ops, onehot, weights, offset)
    return ops.input(owner, weights.token_emb[tokens] + weights.pos_emb[offset:offset + n])


class LogitConstraint(Protocol):
    """Public per-step restriction of the next token given the tokens generated so far."""

    def logit_bias(self, history: Sequence[int]) -> np.ndarray: ...


@dataclass
class GenerationResult:
    tokens: Optional[np.ndarray]
    shared_tokens: List[RingTensor]
    mul_elements: List[int]

    @property
    def steps(self) -> int:
        return len(self.shared_tokens)


def secure_generate(ops: TensorOps, prompt: np.ndarray, weights: ModelWeights, steps: int,
                    cache: bool = True, reveal_tokens: bool = True,
                    constraint: Optional[LogitConstraint] = None, stop_token: Optional[int] = None,
                    owner: int = UAV_NODE, reveal_to: Optional[int] = None) -> GenerationResult:
    """Greedy decoding of ``steps`` tokens after ``prompt`` of shape (n,) or (batch, n).

    In reveal-tokens mode each chosen index is opened (to everyone, or only to
    ``reveal_to``) and the next embedding is input from it. Otherwise the index
    never leaves shared form and the next embedding is the shared one-hot times
    the embedding table.
    """
    cfg = weights.config
    prompt = _check_tokens(np.atleast_2d(prompt), cfg)
    n = prompt.shape[-1]
    if steps < 1:
        raise ValidationError("steps must be at least 1")
    if n + steps > cfg.max_seq:
        raise CapacityError(f"prompt of {n} plus {steps} steps exceeds max_seq={cfg.max_seq}")
    if constraint is not None and not reveal_tokens:
        raise ValidationError("constrained decoding needs revealed tokens")

    kv = KVCache(cfg.max_seq) if cache else None
    x = embed_tokens(ops, prompt, weights, owner)
    context = x
    history: List[List[int]] = [[] for _ in range(prompt.shape[0])]
    revealed: List[np.ndarray] = []
    shared_tokens: List[RingTensor] = []
    counts: List[int] = []

    for step in range(steps):
        before = ops.mul_elements
        logits = secure_forward(ops, x if cache else context, weights, kv)
        last = logits[..., -1, :]
        if constraint is not None:
            last = ops.add_public(last, np.stack([constraint.logit_bias(h) for h in history]))
        with ops.phase(Phase.ARGMAX):
            index, onehot = argmax_protocol(ops, last)
        shared_tokens.append(index)

        done = step == steps - 1
        if reveal_tokens:
            tok = np.rint(ops.reveal(index, to=reveal_to)).astype(np.int64)
            revealed.append(tok)
            for row, t in zip(history, tok):
                row.append(int(t))
            if stop_token is not None and all(stop_token in row for row in history):
                done = True
        if not done:
            pos = n + step
            if not reveal_tokens:
                x = embed_onehot(ops, onehot.expand_dims(-2), weights, pos)
            elif reveal_to is None:
                if weights.shared:
                    x = embed_onehot(ops, ops.public(np.eye(cfg.vocab_size)[tok][:, None, :], 0), weights, pos)
                else:
                    x = ops.public((weights.token_emb[tok] + weights.pos_emb[pos])[:, None, :])
            else:
                x = embed_tokens(ops, tok[:, None], weights, owner=reveal_to, offset=pos)
            if not cache:
                context = ops.concat([context, x], axis=-2)
        counts.append(ops.mul_elements - before)
        logger.debug(f"generation step {step}: {counts[-1]} multiplied elements")
        if done:
            break

    tokens = np.stack(revealed, axis=-1) if revealed else None
    return GenerationResult(tokens=tokens, shared_tokens=shared_tokens, mul_elements=counts)
