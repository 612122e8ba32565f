"""Plaintext oracles for the secure kernels.

``FixedOps`` runs the exact fixed-point schedule of the secure engine with
deterministic floor truncation; ``FloatOps`` runs the same schedule without
rounding (optionally with exact exp, reciprocal, rsqrt and GELU). Both plug
into the kernels of ``app.mpc.nn`` unchanged.
"""

import dataclasses
import logging
from abc import ABC, abstractmethod
from contextlib import nullcontext
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.errors import RangeError, ScaleError, ShapeError
from ..core.ring import FixedTensor, FloatTensor, RingTensor, arithmetic_shift, decode_fixed, encode_fixed, signed
from ..core.types import ErrorProfile, FixedPointConfig, GeluMode, Phase
from ..mpc.nn import ModelWeights, embed_tokens, secure_forward
from ..mpc.protocols import APPROXIMATIONS, select_by_bits
from .functions import gelu_exact

logger = logging.getLogger(__name__)

PROFILE_SCHEMA = "profile/v1"


class PlainOps(ABC):
    """Shared plaintext arithmetic; subclasses fix the carrier and rounding."""

    tensor_cls = FixedTensor
    exact_math = False

    def __init__(self, fixed_point: Optional[FixedPointConfig] = None):
        self.fixed_point = fixed_point or FixedPointConfig()
        self.mul_elements = 0
        self.reveal_count = 0

    @property
    def frac(self) -> int:
        return self.fixed_point.fractional_bits

    def phase(self, phase: Phase):
        return nullcontext()

    @abstractmethod
    def encode(self, values, scale: Optional[int] = None) -> np.ndarray:
        """Public reals as carrier data at ``scale``."""

    @abstractmethod
    def decode(self, data: np.ndarray, scale: int) -> np.ndarray:
        """Carrier data back to reals."""

    @abstractmethod
    def _shift(self, data: np.ndarray, bits: int) -> np.ndarray:
        """Divide carrier data by 2^bits."""

    @abstractmethod
    def _less(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Elementwise a < b as 0/1 carrier data."""

    def _wrap(self, data: np.ndarray, scale: int) -> RingTensor:
        return self.tensor_cls(data, scale)

    @staticmethod
    def _same_scale(x: RingTensor, y: RingTensor) -> None:
        if x.scale != y.scale:
            raise ScaleError(f"cannot combine scales {x.scale} and {y.scale}")

    def public(self, values, scale: Optional[int] = None) -> RingTensor:
        scale = self.frac if scale is None else scale
        return self._wrap(self.encode(values, scale), scale)

    def input(self, owner: int, values, scale: Optional[int] = None) -> RingTensor:
        return self.public(values, scale)

    def add(self, x: RingTensor, y: RingTensor) -> RingTensor:
        self._same_scale(x, y)
        return self._wrap(x.data + y.data, x.scale)

    def sub(self, x: RingTensor, y: RingTensor) -> RingTensor:
        self._same_scale(x, y)
        return self._wrap(x.data - y.data, x.scale)

    def neg(self, x: RingTensor) -> RingTensor:
        return self._wrap(np.zeros_like(x.data) - x.data, x.scale)

    def add_public(self, x: RingTensor, c) -> RingTensor:
        return self._wrap(x.data + self.encode(c, x.scale), x.scale)

    def mul_public(self, x: RingTensor, c, frac: Optional[int] = None) -> RingTensor:
        frac = self.frac if frac is None else frac
        return self._wrap(x.data * self.encode(c, frac), x.scale + frac)

    def matmul_public(self, x: RingTensor, w: np.ndarray, frac: Optional[int] = None) -> RingTensor:
        frac = self.frac if frac is None else frac
        w = np.asarray(w)
        if x.shape[-1] != w.shape[0]:
            raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")
        return self._wrap(np.matmul(x.data, self.encode(w, frac)), x.scale + frac)

    def upscale(self, x: RingTensor, bits: int) -> RingTensor:
        return self._wrap(x.data * self.encode(2 ** bits, 0), x.scale + bits)

    def mul(self, x: RingTensor, y: RingTensor) -> RingTensor:
        data = x.data * y.data
        self.mul_elements += int(np.size(data))
        return self._wrap(data, x.scale + y.scale)

    def mul_many(self, pairs) -> list:
        return [self.mul(x, y) for x, y in pairs]

    def matmul(self, x: RingTensor, y: RingTensor) -> RingTensor:
        if x.shape[-1] != y.shape[-2 if y.ndim > 1 else 0]:
            raise ShapeError(f"cannot multiply {x.shape} by {y.shape}")
        data = np.matmul(x.data, y.data)
        self.mul_elements += int(np.size(data))
        return self._wrap(data, x.scale + y.scale)

    def trunc(self, x: RingTensor, bits: Optional[int] = None) -> RingTensor:
        bits = x.scale - self.frac if bits is None else bits
        if bits < 0:
            raise ScaleError(f"cannot truncate scale {x.scale} by {bits} bits")
        return self._wrap(self._shift(x.data, bits), x.scale - bits)

    def less_than(self, x: RingTensor, y: RingTensor) -> RingTensor:
        self._same_scale(x, y)
        return self._wrap(self._less(x.data, y.data), 0)

    def select_many(self, b: RingTensor, pairs) -> list:
        return select_by_bits(self, b, pairs)

    def select(self, b: RingTensor, x: RingTensor, y: RingTensor) -> RingTensor:
        return self.select_many(b, [(x, y)])[0]

    def reveal(self, x: RingTensor, to: Optional[int] = None) -> np.ndarray:
        self.reveal_count += 1
        return self.decode(x.data, x.scale)

    def concat(self, tensors: Sequence[RingTensor], axis: int = -1) -> RingTensor:
        return self.tensor_cls.concat(tensors, axis=axis)

    def approx(self, kind: str, x: RingTensor) -> RingTensor:
        return APPROXIMATIONS[kind](self, x)


class FixedOps(PlainOps):
    """Ring arithmetic with deterministic floor truncation."""

    tensor_cls = FixedTensor

    def encode(self, values, scale: Optional[int] = None) -> np.ndarray:
        return encode_fixed(values, self.fixed_point, self.frac if scale is None else scale)

    def decode(self, data: np.ndarray, scale: int) -> np.ndarray:
        return decode_fixed(data, self.fixed_point, scale)

    def _shift(self, data: np.ndarray, bits: int) -> np.ndarray:
        return arithmetic_shift(data, bits)

    def _less(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (signed(a) < signed(b)).astype(np.uint64)


EXACT_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": np.exp,
    "reciprocal": lambda v: 1.0 / v,
    "rsqrt": lambda v: 1.0 / np.sqrt(v),
    "gelu": gelu_exact,
}


class FloatOps(PlainOps):
    """The fixed-point schedule carried out in float64 without any rounding."""

    tensor_cls = FloatTensor

    def __init__(self, fixed_point: Optional[FixedPointConfig] = None, exact_math: bool = False):
        super().__init__(fixed_point)
        self.exact_math = exact_math

    def encode(self, values, scale: Optional[int] = None) -> np.ndarray:
        return np.ldexp(np.asarray(values, dtype=np.float64), self.frac if scale is None else scale)

    def decode(self, data: np.ndarray, scale: int) -> np.ndarray:
        return np.ldexp(np.asarray(data, dtype=np.float64), -scale)

    def _shift(self, data: np.ndarray, bits: int) -> np.ndarray:
        return np.ldexp(data, -bits)

    def _less(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a < b).astype(np.float64)

    def exact(self, kind: str, x: RingTensor) -> RingTensor:
        return self.public(EXACT_FUNCTIONS[kind](self.decode(x.data, x.scale)), x.scale)

    def approx(self, kind: str, x: RingTensor) -> RingTensor:
        if self.exact_math:
            return self.exact(kind, x)
        return super().approx(kind, x)


def make_ops(arithmetic: str, fixed_point: Optional[FixedPointConfig] = None, exact_math: bool = False) -> PlainOps:
    if arithmetic == "fixed":
        return FixedOps(fixed_point)
    if arithmetic == "float":
        return FloatOps(fixed_point, exact_math=exact_math)
    raise ValueError(f"unknown arithmetic {arithmetic!r}; expected 'fixed' or 'float'")


def plain_forward(tokens: np.ndarray, weights: ModelWeights, arithmetic: str = "fixed",
                  fixed_point: Optional[FixedPointConfig] = None, exact_math: bool = False,
                  gelu_mode: Optional[GeluMode] = None) -> np.ndarray:
    """Plaintext logits of shape (..., seq, V) following the secure truncation schedule."""
    if gelu_mode is not None:
        cfg = weights.config.model_copy(update={"gelu_mode": GeluMode(gelu_mode)})
        weights = dataclasses.replace(weights, config=cfg)
    ops = make_ops(arithmetic, fixed_point, exact_math)
    logits = secure_forward(ops, embed_tokens(ops, tokens, weights), weights)
    return ops.reveal(logits)


def logit_divergence(weights: ModelWeights, tokens: np.ndarray) -> Dict[str, float]:
    """End-to-end effect of the piecewise GELU: float forward with it against exact GELU."""
    piecewise = plain_forward(tokens, weights, "float", exact_math=True, gelu_mode=GeluMode.PIECEWISE)
    exact = plain_forward(tokens, weights, "float", exact_math=True, gelu_mode=GeluMode.EXACT_REFERENCE)
    gap = np.abs(piecewise - exact)
    scale = np.maximum(np.abs(exact).max(), 1e-12)
    return {
        "max_abs_logit_gap": float(gap.max()),
        "mean_abs_logit_gap": float(gap.mean()),
        "relative_gap": float(gap.max() / scale),
        "argmax_agreement": float(np.mean(piecewise.argmax(-1) == exact.argmax(-1))),
    }


def approx_error_profile(f_exact: Callable[[np.ndarray], np.ndarray],
                         f_approx: Callable[[np.ndarray], np.ndarray],
                         domain: Tuple[float, float], step: float) -> ErrorProfile:
    """Tabulate |f_exact - f_approx| on the grid lo, lo + step, ..., hi."""
    lo, hi = float(domain[0]), float(domain[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or step <= 0 or hi < lo:
        raise RangeError(f"invalid profile domain [{lo}, {hi}] with step {step}")
    count = int(round((hi - lo) / step)) + 1
    grid = np.linspace(lo, hi, count)
    exact = np.asarray(f_exact(grid), dtype=np.float64)
    approx = np.asarray(f_approx(grid), dtype=np.float64)
    abs_error = np.abs(exact - approx)
    rel_error = abs_error / np.maximum(np.abs(exact), 1e-6)
    worst = int(np.argmax(abs_error))
    return ErrorProfile(
        grid=grid.tolist(), exact=exact.tolist(), approx=approx.tolist(),
        abs_error=abs_error.tolist(), rel_error=rel_error.tolist(),
        max_error=float(abs_error[worst]), mean_error=float(abs_error.mean()),
        argmax=float(grid[worst]), max_rel_error=float(rel_error.max()),
    )


def profile_frame(profile: ErrorProfile, name: str = "") -> pd.DataFrame:
    df = pd.DataFrame({
        "x": profile.grid, "exact": profile.exact, "approx": profile.approx,
        "abs_error": profile.abs_error, "rel_error": profile.rel_error,
    })
    df.insert(0, "schema", PROFILE_SCHEMA)
    if name:
        df.insert(1, "function", name)
    return df


def write_profile_csv(profile: ErrorProfile, path: Union[str, Path], name: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    profile_frame(profile, name).to_csv(path, index=False)
    logger.info(f"Wrote error profile ({len(profile.grid)} points) to {path}")
    return path
