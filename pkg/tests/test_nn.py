"""Tests for the transformer kernels, the secure forward pass and decoding."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.errors import CapacityError, RangeError, ShapeError, ValidationError
from app.core.types import AdderKind, GeluMode, ModelConfig, SessionConfig
from app.mpc.network import establish_session
from app.mpc.nn import (
    KVCache, ModelWeights, causal_mask, embed_tokens, mpc_attention, mpc_gelu, mpc_gelu_polynomial,
    mpc_layernorm, mpc_linear, mpc_softmax, secure_forward, secure_generate, share_weights,
)
from app.mpc.protocols import SecureOps
from app.reference.engine import FixedOps, plain_forward
from app.reference.functions import gelu_piecewise, gelu_polynomial

ULP = 2.0 ** -16
SMALL = ModelConfig(n_layers=1, d_model=16, n_heads=2, max_seq=24)


@pytest.fixture
def secure():
    with establish_session(SessionConfig(seed=3, adder=AdderKind.KOGGE_STONE)) as s:
        yield SecureOps(s)


@pytest.fixture
def fixed():
    return FixedOps()


@pytest.fixture(scope="module")
def weights():
    return ModelWeights.random(SMALL, seed=1)


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def float_attention(q, k, v, n_heads):
    seq, d = q.shape
    w = d // n_heads
    split = lambda t: t.reshape(seq, n_heads, w).transpose(1, 0, 2)
    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(w)
    scores = np.where(causal_mask(seq, seq), -np.inf, scores)
    out = softmax(scores) @ vh
    return out.transpose(1, 0, 2).reshape(seq, d)


class TestLinear:
    """Projection with a single truncation."""

    def test_identity(self, secure):
        """W = I, b = 0 returns the input within one ulp."""
        x = np.array([[0.5, -1.25, 3.0, 7.75]])
        out = secure.reveal(mpc_linear(secure, secure.input(0, x), np.eye(4), np.zeros(4)))
        assert np.allclose(out, x, atol=ULP)

    def test_matches_fixed_oracle(self, secure, fixed):
        """A random 4x4 projection agrees with plaintext fixed point within 2 ulp."""
        rng = np.random.default_rng(4)
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 4)), rng.normal(size=4)
        got = secure.reveal(mpc_linear(secure, secure.input(0, x), w, b))
        want = fixed.reveal(mpc_linear(fixed, fixed.input(0, x), w, b))
        assert np.max(np.abs(got - want)) <= 2 * ULP

    def test_shape_mismatch(self, fixed):
        """The weight's input width must match the last axis."""
        with pytest.raises(ShapeError):
            mpc_linear(fixed, fixed.input(0, np.zeros((2, 3))), np.zeros((4, 4)))


class TestLayerNorm:
    """Mean, variance and inverse square root over shares."""

    def test_symmetric_pair(self, secure):
        """[1, -1] with unit gain and zero bias normalizes to itself."""
        out = secure.reveal(mpc_layernorm(secure, secure.input(0, np.array([[1.0, -1.0]])),
                                          np.ones(2), np.zeros(2)))
        assert np.allclose(out, [[1.0, -1.0]], atol=0.01)

    def test_matches_float(self, secure, fixed):
        """Random rows match the float formula and the fixed-point oracle."""
        rng = np.random.default_rng(5)
        x = rng.normal(0.0, 1.5, size=(6, 8))
        gamma, beta = rng.uniform(0.5, 1.5, 8), rng.normal(0.0, 0.1, 8)
        want = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * gamma + beta
        got = secure.reveal(mpc_layernorm(secure, secure.input(0, x), gamma, beta))
        oracle = fixed.reveal(mpc_layernorm(fixed, fixed.input(0, x), gamma, beta))
        assert np.allclose(got, want, atol=0.02)
        assert np.allclose(got, oracle, atol=2 ** -8)

    def test_width_mismatch(self, fixed):
        """Gain and bias must span the normalized axis."""
        with pytest.raises(ShapeError):
            mpc_layernorm(fixed, fixed.input(0, np.ones((2, 4))), np.ones(3), np.zeros(3))


class TestGelu:
    """Piecewise-linear GELU and the polynomial baseline."""

    @pytest.fixture
    def grid(self):
        return np.arange(-8.0, 8.0 + 2 ** -8, 2 ** -8)

    def test_piecewise_matches_plaintext(self, secure, fixed, grid):
        """Reconstructed GELU equals the plaintext piecewise evaluator within 2 ulp."""
        got = secure.reveal(mpc_gelu(secure, secure.input(0, grid)))
        oracle = fixed.reveal(mpc_gelu(fixed, fixed.input(0, grid)))
        assert np.max(np.abs(got - oracle)) <= 2 * ULP
        assert np.max(np.abs(got - gelu_piecewise(grid))) < 1e-3

    def test_segment_boundaries(self, secure):
        """Thresholds belong to the segment on their right."""
        x = np.array([-3.0, -1.0, 1.0, -3.0 - 2 ** -16])
        got = secure.reveal(mpc_gelu(secure, secure.input(0, x)))
        assert np.allclose(got, [-1.5, 0.8413 * -1.0 + 0.1587, 1.0 - 0.1587, 0.0], atol=4 * ULP)

    def test_piecewise_round_count(self, secure):
        """Batched comparison, one truncation and one selection round."""
        x = secure.input(0, np.linspace(-4, 4, 32))
        secure.session.reset_accounting()
        mpc_gelu(secure, x)
        assert secure.session.stats.rounds == 12

    def test_polynomial_baseline(self, secure, fixed):
        """Horner evaluation tracks the float polynomial and costs 24 rounds."""
        grid = np.linspace(-5, 5, 201)
        got = fixed.reveal(mpc_gelu_polynomial(fixed, fixed.input(0, grid)))
        assert np.max(np.abs(got - gelu_polynomial(grid))) < 1e-3
        x = secure.input(0, grid)
        secure.session.reset_accounting()
        mpc_gelu(secure, x, GeluMode.EXACT_REFERENCE)
        assert secure.session.stats.rounds == 24


class TestSoftmax:
    """Stabilized softmax with masking and temperature."""

    def test_rows_sum_to_one(self, secure):
        """Rows of up to 16 entries sum to 1 within 2^-10 and stay nonnegative."""
        rng = np.random.default_rng(6)
        for n in (1, 3, 8, 16):
            logits = rng.uniform(-4, 4, size=(5, n))
            probs = secure.reveal(mpc_softmax(secure, secure.input(0, logits)))
            assert np.all(probs >= 0)
            assert np.max(np.abs(probs.sum(-1) - 1.0)) <= 2 ** -10
            assert np.allclose(probs, softmax(logits), atol=2 ** -8)

    def test_singleton(self, secure):
        """A single entry gets all the mass."""
        probs = secure.reveal(mpc_softmax(secure, secure.input(0, np.array([2.5]))))
        assert abs(probs[0] - 1.0) <= 2 ** -10

    def test_mask(self, secure):
        """Masked positions receive no probability."""
        logits = np.array([[1.0, 2.0, 3.0, 4.0]])
        mask = np.array([[False, False, True, True]])
        probs = secure.reveal(mpc_softmax(secure, secure.input(0, logits), mask=mask))
        assert np.all(probs[0, 2:] < 2 ** -10)
        assert np.allclose(probs[0, :2], softmax(np.array([1.0, 2.0])), atol=2 ** -8)

    def test_temperature(self, fixed):
        """Logits are divided by T before normalizing."""
        logits = np.array([0.5, -1.0, 2.0])
        probs = fixed.reveal(mpc_softmax(fixed, fixed.input(0, logits), temperature=2.0))
        assert np.allclose(probs, softmax(logits / 2.0), atol=2 ** -8)

    @pytest.mark.parametrize("temperature", [0.0, -1.0])
    def test_nonpositive_temperature(self, fixed, temperature):
        """Temperature must be positive."""
        with pytest.raises(ValidationError):
            mpc_softmax(fixed, fixed.input(0, np.zeros(3)), temperature=temperature)

    def test_mask_shape(self, fixed):
        """A mask that does not broadcast is a shape error."""
        with pytest.raises(ShapeError):
            mpc_softmax(fixed, fixed.input(0, np.zeros((2, 3))), mask=np.zeros(4, dtype=bool))


class TestAttention:
    """Multi-head causal attention."""

    def test_matches_float(self, secure):
        """seq=4, d=8, h=2 agrees with the float formula within 0.02."""
        rng = np.random.default_rng(7)
        q, k, v = (rng.normal(size=(4, 8)) for _ in range(3))
        got = secure.reveal(mpc_attention(secure, secure.input(0, q), secure.input(0, k), secure.input(0, v), 2))
        assert np.allclose(got, float_attention(q, k, v, 2), atol=0.02)

    def test_single_position(self, secure):
        """With one position the output is the value row."""
        v = np.array([[0.25, -0.5, 1.0, 2.0]])
        q = secure.input(0, np.ones((1, 4)))
        got = secure.reveal(mpc_attention(secure, q, q, secure.input(0, v), 2))
        assert np.allclose(got, v, atol=2 ** -8)

    def test_causal_mask(self):
        """Queries are aligned to the last positions of the keys."""
        assert causal_mask(3, 3).tolist() == [[False, True, True], [False, False, True], [False, False, False]]
        assert not causal_mask(1, 5).any()

    def test_heads_must_divide(self, fixed):
        """Width must split evenly into heads."""
        x = fixed.input(0, np.zeros((2, 6)))
        with pytest.raises(ShapeError):
            mpc_attention(fixed, x, x, x, 4)


class TestForward:
    """End-to-end logits."""

    @pytest.fixture
    def tokens(self):
        return np.array([3, 17, 42, 5, 9])

    def test_secure_matches_plaintext(self, secure, weights, tokens):
        """Reconstructed secure logits follow the fixed-point reference."""
        got = secure.reveal(secure_forward(secure, embed_tokens(secure, tokens, weights), weights))
        want = plain_forward(tokens, weights, "fixed")
        assert got.shape == (5, SMALL.vocab_size)
        assert np.allclose(got, want, atol=0.02)

    def test_fixed_tracks_float(self, weights, tokens):
        """Fixed point at f=16 stays close to float arithmetic."""
        fixed = plain_forward(tokens, weights, "fixed")
        flt = plain_forward(tokens, weights, "float")
        assert np.allclose(fixed, flt, atol=0.05)

    def test_shared_weights(self, secure, weights, tokens):
        """Secret-shared parameters give the same logits as public ones."""
        shared = share_weights(secure, weights)
        assert shared.shared
        got = secure.reveal(secure_forward(secure, embed_tokens(secure, tokens[:3], shared), shared))
        want = plain_forward(tokens[:3], weights, "fixed")
        assert np.allclose(got, want, atol=0.02)
        with pytest.raises(ValidationError):
            shared.digest()

    def test_too_many_positions(self, fixed, weights):
        """Inputs longer than max_seq are refused."""
        with pytest.raises(CapacityError):
            secure_forward(fixed, fixed.public(np.zeros((SMALL.max_seq + 1, SMALL.d_model))), weights)

    def test_bad_token(self, fixed, weights):
        """Token ids outside the vocabulary are rejected."""
        with pytest.raises(ValidationError):
            embed_tokens(fixed, np.array([1, SMALL.vocab_size]), weights)

    def test_cache_capacity(self, fixed):
        """The cache refuses positions beyond its capacity."""
        cache = KVCache(capacity=2)
        k = fixed.public(np.zeros((3, 4)))
        with pytest.raises(CapacityError):
            cache.extend(fixed, 0, k, k)


class TestWeights:
    """Parameter bookkeeping."""

    def test_digest_is_stable(self):
        """Identical parameters hash identically."""
        assert ModelWeights.random(SMALL, 1).digest() == ModelWeights.random(SMALL, 1).digest()
        assert ModelWeights.random(SMALL, 1).digest() != ModelWeights.random(SMALL, 2).digest()

    def test_wrong_tensor_count(self, weights):
        """from_tensors needs every parameter."""
        with pytest.raises(ShapeError):
            ModelWeights.from_tensors(SMALL, list(weights.tensors())[:-1])

    def test_wrong_shape(self, weights):
        """A mis-shaped parameter is a shape error."""
        tensors = list(weights.tensors())
        tensors[0] = np.zeros((SMALL.vocab_size, SMALL.d_model + 1))
        with pytest.raises(ShapeError):
            ModelWeights.from_tensors(SMALL, tensors)

    def test_non_finite(self, weights):
        """NaN parameters are out of range."""
        tensors = [np.array(t, copy=True) for t in weights.tensors()]
        tensors[-1][0, 0] = np.nan
        with pytest.raises(RangeError):
            ModelWeights.from_tensors(SMALL, tensors)


class TestGeneration:
    """Greedy decoding with and without the key/value cache."""

    @pytest.fixture
    def prompt(self):
        return np.array([2, 11, 30, 7, 19])

    @pytest.mark.parametrize("index", range(20))
    def test_cache_is_exact_and_cheaper(self, weights, index):
        """Cached decoding picks the same tokens with fewer multiplications per step."""
        rng = np.random.default_rng(index)
        prompt = rng.integers(0, SMALL.vocab_size, size=int(rng.integers(5, 13)))
        cached = secure_generate(FixedOps(), prompt, weights, steps=8, cache=True)
        full = secure_generate(FixedOps(), prompt, weights, steps=8, cache=False)
        assert np.array_equal(cached.tokens, full.tokens)
        assert cached.tokens.shape == (1, 8)
        assert sum(full.mul_elements[1:]) / sum(cached.mul_elements[1:]) > 1.5

    def test_secure_generation_shapes(self, secure, weights, prompt):
        """Encrypted decoding yields one revealed token per step."""
        result = secure_generate(secure, prompt, weights, steps=2)
        assert result.tokens.shape == (1, 2)
        assert result.steps == 2
        assert np.all((result.tokens >= 0) & (result.tokens < SMALL.vocab_size))

    def test_hidden_tokens(self, secure, weights, prompt):
        """Without reveal the chosen indices stay shared."""
        result = secure_generate(secure, prompt, weights, steps=2, reveal_tokens=False)
        assert result.tokens is None
        assert len(result.shared_tokens) == 2
        index = secure.reveal(result.shared_tokens[0])
        assert 0 <= int(np.rint(index[0])) < SMALL.vocab_size

    def test_stop_token(self, weights, prompt):
        """Decoding ends once every row has produced the stop token."""
        first = secure_generate(FixedOps(), prompt, weights, steps=3)
        stopped = secure_generate(FixedOps(), prompt, weights, steps=3, stop_token=int(first.tokens[0, 0]))
        assert stopped.steps == 1

    def test_invalid_requests(self, fixed, weights, prompt):
        """Step counts, capacity and hidden-token constraints are checked up front."""

        class Anything:
            def logit_bias(self, history):
                return np.zeros(SMALL.vocab_size)

        with pytest.raises(ValidationError):
            secure_generate(fixed, prompt, weights, steps=0)
        with pytest.raises(CapacityError):
            secure_generate(fixed, prompt, weights, steps=SMALL.max_seq)
        with pytest.raises(ValidationError):
            secure_generate(fixed, prompt, weights, steps=1, reveal_tokens=False, constraint=Anything())
