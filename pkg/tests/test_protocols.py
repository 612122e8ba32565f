"""Tests for the interactive protocols: multiplication, truncation, comparison, selection,
maxima and the elementary approximations."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.errors import ScaleError, TripleExhaustedError
from app.core.ring import arithmetic_shift, as_ring, signed
from app.core.types import AdderKind, FixedPointConfig, MulBackend, SessionConfig
from app.mpc.network import establish_session
from app.mpc.protocols import (
    SecureOps, TripleStore, argmax_protocol, elementary_approx, exp_limit, less_than_protocol, max_protocol,
    mul_protocol, reciprocal_newton, rsqrt_newton, select_protocol, trunc_protocol,
)
from app.reference.engine import FixedOps

ULP = 2.0 ** -16


@pytest.fixture
def secure():
    """SecureOps over an in-process session with the log-depth adder."""
    with establish_session(SessionConfig(seed=21, adder=AdderKind.KOGGE_STONE)) as s:
        yield SecureOps(s)


def ring_values(rng: np.random.Generator, n: int, bits: int) -> np.ndarray:
    return rng.integers(-(2 ** bits), 2 ** bits, size=n, dtype=np.int64)


class TestMultiplication:
    """Replicated multiplication and matrix products."""

    def test_ring_product_is_exact(self, secure):
        """Products of arbitrary ring elements open to the wrapped plaintext product."""
        rng = np.random.default_rng(0)
        a = rng.integers(np.iinfo(np.int64).min, np.iinfo(np.int64).max, size=100_000, dtype=np.int64)
        b = rng.integers(np.iinfo(np.int64).min, np.iinfo(np.int64).max, size=100_000, dtype=np.int64)
        x = secure.input_ring(0, a, 0)
        y = secure.input_ring(1, b, 0)
        z = mul_protocol(secure, x, y)
        assert np.array_equal(secure.reveal_ring(z), as_ring(a) * as_ring(b))

    def test_fixed_point_product(self, secure):
        """A product carries scale 2f and decodes exactly."""
        x = secure.input(0, np.array([1.5, -2.0, 0.25]))
        y = secure.input(2, np.array([-2.0, 3.5, 8.0]))
        z = secure.mul(x, y)
        assert z.scale == 2 * secure.frac
        assert secure.reveal(z).tolist() == [-3.0, -7.0, 2.0]

    def test_mul_many_single_round(self, secure):
        """Batched products share one round."""
        x = secure.input(0, np.ones(4))
        y = secure.input(1, np.ones((2, 3)))
        secure.session.reset_accounting()
        a, b = secure.mul_many([(x, x), (y, y)])
        assert secure.session.stats.rounds == 1
        assert a.shape == (4,) and b.shape == (2, 3)

    def test_matmul(self, secure):
        """Shared-by-shared matrix products match numpy in the ring."""
        rng = np.random.default_rng(1)
        a = ring_values(rng, 12, 20).reshape(3, 4)
        b = ring_values(rng, 8, 20).reshape(4, 2)
        z = secure.matmul(secure.input_ring(0, a, 0), secure.input_ring(1, b, 0))
        assert np.array_equal(signed(secure.reveal_ring(z)), a @ b)

    def test_batched_matmul(self, secure):
        """Leading axes broadcast like numpy."""
        rng = np.random.default_rng(2)
        a = ring_values(rng, 2 * 3 * 4, 16).reshape(2, 3, 4)
        b = ring_values(rng, 2 * 4 * 5, 16).reshape(2, 4, 5)
        z = secure.matmul(secure.input_ring(0, a, 0), secure.input_ring(1, b, 0))
        assert np.array_equal(signed(secure.reveal_ring(z)), a @ b)


class TestTruncation:
    """Probabilistic truncation."""

    def test_error_is_minus_one_or_zero(self, secure):
        """Truncated values differ from the floor by -1 or 0 ulp."""
        rng = np.random.default_rng(3)
        v = ring_values(rng, 20_000, 30)
        x = secure.input_ring(0, v, 32)
        y = trunc_protocol(secure, x, 16)
        assert y.scale == 16
        diff = signed(secure.reveal_ring(y)) - signed(arithmetic_shift(as_ring(v), 16))
        assert set(np.unique(diff).tolist()) <= {-1, 0}

    def test_default_bits_reach_frac(self, secure):
        """Without explicit bits the result returns to scale f."""
        x = secure.input(0, np.array([1.0, -1.0]))
        z = secure.trunc(secure.mul(x, x))
        assert z.scale == secure.frac
        assert np.allclose(secure.reveal(z), [1.0, 1.0], atol=ULP)

    def test_one_frame_from_p2_to_p1(self, secure):
        """Truncation sends a single frame."""
        x = secure.input(0, np.ones(8), scale=32)
        secure.session.reset_accounting()
        secure.trunc(x, 16)
        assert secure.session.stats.total_messages == 1
        assert secure.session.stats.pair_bytes(1, 0) > 0

    def test_zero_bits_is_identity(self, secure):
        """Truncating by zero bits is free and returns the input."""
        x = secure.input(0, np.ones(3))
        secure.session.reset_accounting()
        assert secure.trunc(x, 0) is x
        assert secure.session.stats.rounds == 0

    def test_negative_bits(self, secure):
        """A tensor already below scale f cannot be truncated to f."""
        x = secure.input(0, np.ones(3), scale=8)
        with pytest.raises(ScaleError):
            secure.trunc(x)


class TestComparison:
    """Secure less-than over the boolean adders."""

    @pytest.mark.parametrize("adder", [AdderKind.RIPPLE, AdderKind.KOGGE_STONE])
    def test_random_pairs(self, adder):
        """Bits match the plaintext comparison for random pairs."""
        rng = np.random.default_rng(4)
        a = ring_values(rng, 2000, 40)
        b = ring_values(rng, 2000, 40)
        b[:50] = a[:50]
        with establish_session(SessionConfig(adder=adder)) as s:
            ops = SecureOps(s)
            bit = less_than_protocol(ops, ops.input_ring(0, a, 0), ops.input_ring(1, b, 0))
            assert bit.scale == 0
            assert np.array_equal(signed(ops.reveal_ring(bit)), (a < b).astype(np.int64))

    @pytest.mark.parametrize("adder,rounds", [(AdderKind.RIPPLE, 66), (AdderKind.KOGGE_STONE, 10)])
    def test_round_counts(self, adder, rounds):
        """The ripple adder costs 66 rounds, Kogge-Stone 10."""
        with establish_session(SessionConfig(adder=adder)) as s:
            ops = SecureOps(s)
            x = ops.input(0, np.array([1.0, 2.0]))
            y = ops.input(1, np.array([2.0, 1.0]))
            s.reset_accounting()
            ops.less_than(x, y)
            assert s.stats.rounds == rounds
            assert s.stats.phase_rounds["compare"] > 0

    @pytest.mark.slow
    def test_exhaustive_small_grid(self, secure):
        """Every pair of 8-bit signed values compares correctly."""
        grid = np.arange(-128, 128, dtype=np.int64)
        a, b = np.meshgrid(grid, grid, indexing="ij")
        bit = secure.less_than(secure.input_ring(0, a, 0), secure.input_ring(2, b, 0))
        assert np.array_equal(signed(secure.reveal_ring(bit)), (a < b).astype(np.int64))

    def test_extreme_differences(self, secure):
        """Differences close to the 2^62 limit still compare correctly."""
        a = np.array([2 ** 61, -(2 ** 61), 0, 2 ** 61 - 1], dtype=np.int64)
        b = np.array([-(2 ** 61) + 1, 2 ** 61 - 1, -(2 ** 61), 2 ** 61], dtype=np.int64)
        bit = secure.less_than(secure.input_ring(0, a, 0), secure.input_ring(1, b, 0))
        assert signed(secure.reveal_ring(bit)).tolist() == [0, 1, 0, 1]

    def test_scale_mismatch(self, secure):
        """Operands must share a scale."""
        with pytest.raises(ScaleError):
            secure.less_than(secure.input(0, np.ones(2)), secure.input(0, np.ones(2), scale=8))


class TestSelection:
    """Oblivious selection, maxima and argmax."""

    def test_select_gives_minimum(self, secure):
        """select([x < y], x, y) is the elementwise minimum."""
        x = secure.input(0, np.array([1.0, 5.0, -2.0]))
        y = secure.input(1, np.array([3.0, 4.0, -2.0]))
        out = select_protocol(secure, secure.less_than(x, y), x, y)
        assert secure.reveal(out).tolist() == [1.0, 4.0, -2.0]

    def test_max_odd_length(self, secure):
        """The tournament handles lengths that are not powers of two."""
        v = secure.input(0, np.array([[3.0, 7.0, 7.0, 1.0, 5.0], [-1.0, -3.0, -0.5, -8.0, -2.0]]))
        assert secure.reveal(max_protocol(secure, v)).tolist() == [7.0, -0.5]

    def test_argmax_ties_lowest_index(self, secure):
        """Ties resolve to the lowest index and the one-hot marks it."""
        v = secure.input(0, np.array([3.0, 7.0, 7.0, 1.0, 5.0, 7.0]))
        index, onehot = argmax_protocol(secure, v)
        assert secure.reveal(index).tolist() == 1.0
        assert secure.reveal(onehot).tolist() == [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]

    def test_argmax_matches_fixed_oracle(self, secure):
        """Secure argmax agrees with the plaintext oracle on random rows."""
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(4, 64))
        index, _ = argmax_protocol(secure, secure.input(0, logits))
        plain = FixedOps()
        expected, _ = argmax_protocol(plain, plain.public(logits))
        assert np.array_equal(secure.reveal(index), plain.reveal(expected))
        assert np.array_equal(secure.reveal(index), logits.argmax(-1).astype(float))


class TestTriples:
    """The dealer-triple multiplication backend."""

    @pytest.fixture
    def triple_ops(self):
        with establish_session(SessionConfig(mul_backend=MulBackend.TRIPLES, adder=AdderKind.KOGGE_STONE)) as s:
            yield SecureOps(s)

    def test_products_match(self, triple_ops):
        """Triple-based products are exact."""
        rng = np.random.default_rng(6)
        a = ring_values(rng, 500, 62)
        b = ring_values(rng, 500, 62)
        z = triple_ops.mul(triple_ops.input_ring(0, a, 0), triple_ops.input_ring(1, b, 0))
        assert np.array_equal(triple_ops.reveal_ring(z), as_ring(a) * as_ring(b))

    def test_matmul_matches(self, triple_ops):
        """Matrix triples give exact products."""
        rng = np.random.default_rng(7)
        a = ring_values(rng, 6, 20).reshape(2, 3)
        b = ring_values(rng, 12, 20).reshape(3, 4)
        z = triple_ops.matmul(triple_ops.input_ring(0, a, 0), triple_ops.input_ring(1, b, 0))
        assert np.array_equal(signed(triple_ops.reveal_ring(z)), a @ b)

    def test_one_opening_round(self, triple_ops):
        """A triple multiplication opens both masked operands in one round."""
        x = triple_ops.input(0, np.ones(5))
        triple_ops.session.reset_accounting()
        triple_ops.mul(x, x)
        assert triple_ops.session.stats.rounds == 1
        assert triple_ops.session.stats.total_bytes == 3 * (10 * 8 + 16)

    def test_comparison_with_triples(self, triple_ops):
        """Comparisons work unchanged on the triple backend."""
        x = triple_ops.input(0, np.array([1.0, -2.0, 3.0]))
        y = triple_ops.input(1, np.array([0.5, -1.0, 3.0]))
        assert triple_ops.reveal(triple_ops.less_than(x, y)).tolist() == [0.0, 1.0, 0.0]

    def test_exhausted_pool(self, triple_ops):
        """A bounded dealer refuses to hand out more triples than it may deal."""
        triple_ops.session.triples = TripleStore(triple_ops.session.dealer_rng, capacity=1)
        x = triple_ops.input(0, np.ones(3))
        triple_ops.mul(x, x)
        with pytest.raises(TripleExhaustedError):
            triple_ops.mul(x, x)


class TestApproximations:
    """exp, reciprocal and rsqrt on their documented domains."""

    @pytest.fixture
    def plain(self):
        return FixedOps()

    def test_exp_relative_error_on_positive_range(self, plain):
        """On (0, 4] the limit form stays within 2^-5 + 2^-10 relative error."""
        grid = np.linspace(0.01, 4.0, 400)
        out = plain.reveal(exp_limit(plain, plain.public(grid)))
        assert np.max(np.abs(out / np.exp(grid) - 1.0)) <= 2.0 ** -5 + 2.0 ** -10

    def test_exp_absolute_error_on_negative_range(self, plain):
        """On [-16, 0] the absolute error stays below 2^-9."""
        grid = np.linspace(-16.0, 0.0, 801)
        out = plain.reveal(exp_limit(plain, plain.public(grid)))
        assert np.max(np.abs(out - np.exp(grid))) <= 2.0 ** -9

    @pytest.mark.parametrize("bits", [16, 24, 28, 32])
    def test_exp_at_every_precision(self, bits):
        """The working scale is capped so exp stays in range for large f."""
        plain = FixedOps(FixedPointConfig(fractional_bits=bits))
        grid = np.array([-4.0, -1.0, 0.0, 1.0, 3.0])
        out = plain.reveal(exp_limit(plain, plain.public(grid)))
        assert np.allclose(out, np.exp(grid), rtol=0.04, atol=4 * 2.0 ** -bits + 2.0 ** -9)

    def test_reciprocal(self, plain):
        """Newton reciprocal converges over [2^-4, 2^8]."""
        grid = np.geomspace(2.0 ** -4, 2.0 ** 8, 300)
        out = plain.reveal(reciprocal_newton(plain, plain.public(grid)))
        assert np.all(np.abs(out - 1.0 / grid) <= 2.0 ** -10 * np.maximum(1.0, 1.0 / grid))

    def test_rsqrt(self, plain):
        """Newton inverse square root converges over [2^-4, 2^8]."""
        grid = np.geomspace(2.0 ** -4, 2.0 ** 8, 300)
        out = plain.reveal(rsqrt_newton(plain, plain.public(grid)))
        expected = 1.0 / np.sqrt(grid)
        assert np.all(np.abs(out - expected) <= 2.0 ** -10 * np.maximum(1.0, expected))

    def test_secure_matches_oracle(self, secure):
        """The secure schedule tracks the deterministic oracle within a few ulp."""
        plain = FixedOps()
        grid = np.array([0.0625, 0.5, 1.0, 3.0, 17.0, 200.0])
        for kind in ("reciprocal", "rsqrt"):
            got = secure.reveal(elementary_approx(secure, kind, secure.input(0, grid)))
            want = plain.reveal(elementary_approx(plain, kind, plain.public(grid)))
            assert np.allclose(got, want, atol=2.0 ** -8), kind
        x = np.array([-8.0, -1.0, 0.0, 2.0])
        got = secure.reveal(elementary_approx(secure, "exp", secure.input(0, x)))
        assert np.allclose(got, np.exp(x), rtol=0.04, atol=2.0 ** -9)

    def test_unknown_kind(self, plain):
        """Only exp, reciprocal and rsqrt are available."""
        with pytest.raises(ValueError):
            elementary_approx(plain, "log", plain.public(np.ones(2)))

    def test_scale_must_be_frac(self, plain):
        """Inputs must sit at scale f."""
        with pytest.raises(ScaleError):
            elementary_approx(plain, "exp", plain.public(np.ones(2), scale=8))
