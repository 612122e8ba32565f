"""
Approximation Workflow

Reports, for gelu, softmax, exp, reciprocal and rsqrt:
- the plaintext error profile of the approximation against the exact function
- interactive rounds, bytes and wall time of the secure realization against a
  costlier baseline (degree-12 polynomial for GELU, high-precision iteration
  counts for the others)
- for softmax, the worst row-sum deviation over the grid
"""

import logging
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..core.errors import RangeError, ValidationError
from ..core.ring import RingTensor
from ..core.types import AdderKind, ErrorProfile, Phase, SessionConfig
from ..mpc.network import establish_session
from ..mpc.nn import mpc_gelu, mpc_gelu_polynomial, mpc_softmax
from ..mpc.protocols import (
    SecureOps, TensorOps, exp_limit, max_protocol, reciprocal_newton, rsqrt_newton,
)
from ..reference.engine import FixedOps, approx_error_profile, write_profile_csv
from ..reference.functions import gelu_exact, gelu_piecewise

logger = logging.getLogger(__name__)

APPROX_SCHEMA = "approx/v1"
FUNCTIONS = ("gelu", "softmax", "exp", "reciprocal", "rsqrt")
SOFTMAX_ROW = 8

DEFAULT_DOMAINS: Dict[str, Tuple[float, float]] = {
    "gelu": (-5.0, 5.0),
    "softmax": (-8.0, 8.0),
    "exp": (-16.0, 4.0),
    "reciprocal": (0.0625, 256.0),
    "rsqrt": (0.0625, 256.0),
}
DEFAULT_STEPS: Dict[str, float] = {
    "gelu": 0.01, "softmax": 0.05, "exp": 0.02, "reciprocal": 0.0625, "rsqrt": 0.0625,
}

BASELINE_EXP_SQUARINGS = 12
BASELINE_RECIPROCAL_ITERS = 24
BASELINE_RSQRT_ITERS = 20

Kernel = Callable[[TensorOps, RingTensor], RingTensor]


def _softmax_with(exp_fn: Kernel, reciprocal_fn: Kernel) -> Kernel:
    def kernel(ops: TensorOps, x: RingTensor) -> RingTensor:
        with ops.phase(Phase.SOFTMAX):
            peak = max_protocol(ops, x, axis=-1)
            e = exp_fn(ops, ops.sub(x, peak.expand_dims(-1).broadcast_to(x.shape)))
            inv = reciprocal_fn(ops, e.sum(-1))
            return ops.trunc(ops.mul(e, inv.expand_dims(-1).broadcast_to(e.shape)))
    return kernel


def _precise_exp(ops: TensorOps, x: RingTensor) -> RingTensor:
    return exp_limit(ops, x, BASELINE_EXP_SQUARINGS)


def _precise_reciprocal(ops: TensorOps, x: RingTensor) -> RingTensor:
    return reciprocal_newton(ops, x, BASELINE_RECIPROCAL_ITERS)


# function -> (secure realization, baseline)
KERNELS: Dict[str, Tuple[Kernel, Kernel]] = {
    "gelu": (mpc_gelu, mpc_gelu_polynomial),
    "softmax": (lambda ops, x: mpc_softmax(ops, x), _softmax_with(_precise_exp, _precise_reciprocal)),
    "exp": (exp_limit, _precise_exp),
    "reciprocal": (reciprocal_newton, _precise_reciprocal),
    "rsqrt": (rsqrt_newton, lambda ops, x: rsqrt_newton(ops, x, BASELINE_RSQRT_ITERS)),
}

EXACT: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "gelu": gelu_exact,
    "softmax": lambda g: np.exp(g) / (np.exp(g) + (SOFTMAX_ROW - 1)),
    "exp": np.exp,
    "reciprocal": lambda g: 1.0 / g,
    "rsqrt": lambda g: 1.0 / np.sqrt(g),
}


@dataclass
class ApproxConfig:
    """Configuration for the approximation report."""
    functions: List[str] = field(default_factory=lambda: list(FUNCTIONS))
    domain: Optional[Tuple[float, float]] = None
    step: Optional[float] = None
    session: SessionConfig = field(default_factory=lambda: SessionConfig(adder=AdderKind.KOGGE_STONE))
    out: Optional[str] = None


def softmax_rows(grid: np.ndarray) -> np.ndarray:
    """Rows [g, 0, ..., 0] of width SOFTMAX_ROW; entry 0 carries the grid value."""
    rows = np.zeros((len(grid), SOFTMAX_ROW))
    rows[:, 0] = grid
    return rows


def grid_inputs(function: str, grid: np.ndarray) -> np.ndarray:
    return softmax_rows(grid) if function == "softmax" else grid


def fixed_point_evaluator(function: str, session: SessionConfig) -> Callable[[np.ndarray], np.ndarray]:
    """The secure schedule run on the fixed-point oracle, readable as a plain function of the grid."""
    realization = KERNELS[function][0]

    def evaluate(grid: np.ndarray) -> np.ndarray:
        ops = FixedOps(session.fixed_point)
        out = ops.reveal(realization(ops, ops.public(grid_inputs(function, grid))))
        return out[:, 0] if function == "softmax" else out
    return evaluate


def profile_function(function: str, domain: Tuple[float, float], step: float,
                     session: SessionConfig) -> ErrorProfile:
    # GELU is profiled as the float piecewise surrogate against exact GELU
    approx = gelu_piecewise if function == "gelu" else fixed_point_evaluator(function, session)
    return approx_error_profile(EXACT[function], approx, domain, step)


def softmax_row_sum_error(grid: np.ndarray, session: SessionConfig) -> float:
    ops = FixedOps(session.fixed_point)
    probs = ops.reveal(mpc_softmax(ops, ops.public(softmax_rows(grid))))
    return float(np.abs(probs.sum(-1) - 1.0).max())


def measure_secure(kernel: Kernel, inputs: np.ndarray, session: SessionConfig) -> Dict[str, float]:
    """Rounds, bytes and wall time of ``kernel`` on P1-owned inputs, input sharing excluded."""
    with establish_session(session) as s:
        ops = SecureOps(s)
        x = ops.input(0, inputs)
        s.reset_accounting()
        start = time.perf_counter()
        kernel(ops, x)
        elapsed = (time.perf_counter() - start) * 1000.0
        return {"rounds": s.stats.rounds, "bytes": s.stats.total_bytes, "ms": elapsed}


def approx_report(function: str, domain: Optional[Tuple[float, float]] = None, step: Optional[float] = None,
                  session: Optional[SessionConfig] = None) -> Dict[str, Any]:
    """Error profile plus secure-vs-baseline cost summary for one function."""
    if function not in FUNCTIONS:
        raise ValidationError(f"unknown function '{function}'; expected one of {FUNCTIONS}")
    session = session or SessionConfig(adder=AdderKind.KOGGE_STONE)
    domain = tuple(domain) if domain is not None else DEFAULT_DOMAINS[function]
    step = step if step is not None else DEFAULT_STEPS[function]
    if function in ("reciprocal", "rsqrt") and domain[0] <= 0:
        raise RangeError(f"{function} needs a positive domain, got [{domain[0]}, {domain[1]}]")

    profile = profile_function(function, domain, step, session)
    inputs = grid_inputs(function, np.asarray(profile.grid))
    realization, baseline = KERNELS[function]
    secure = measure_secure(realization, inputs, session)
    reference = measure_secure(baseline, inputs, session)

    summary: Dict[str, Any] = {
        "schema": APPROX_SCHEMA,
        "function": function,
        "domain_lo": domain[0],
        "domain_hi": domain[1],
        "step": step,
        "points": len(profile.grid),
        "max_error": profile.max_error,
        "mean_error": profile.mean_error,
        "max_rel_error": profile.max_rel_error,
        "argmax": profile.argmax,
        "mpc_rounds": secure["rounds"],
        "baseline_rounds": reference["rounds"],
        "mpc_bytes": secure["bytes"],
        "baseline_bytes": reference["bytes"],
        "mpc_ms": round(secure["ms"], 3),
        "baseline_ms": round(reference["ms"], 3),
        "time_reduction": round(1.0 - secure["ms"] / reference["ms"], 4) if reference["ms"] > 0 else 0.0,
        "row_sum_error": softmax_row_sum_error(np.asarray(profile.grid), session) if function == "softmax" else None,
    }
    logger.info(f"{function}: max error {profile.max_error:.3g}, rounds {secure['rounds']} vs "
                f"{reference['rounds']} baseline, time reduction {summary['time_reduction']:.0%}")
    return {"profile": profile, "summary": summary}


class ApproxWorkflow:
    """Workflow for the approximation accuracy and cost report."""

    def __init__(self, config: ApproxConfig):
        self.config = config

    async def initialize(self):
        logger.info("Initializing approximation workflow...")
        unknown = [f for f in self.config.functions if f not in FUNCTIONS]
        if unknown:
            raise ValidationError(f"unknown functions {unknown}; expected a subset of {FUNCTIONS}")
        logger.info(f"Approximation workflow initialized for {self.config.functions}")

    async def run(self) -> Dict[str, Any]:
        logger.info("Starting approximation report...")
        try:
            reports = {f: approx_report(f, self.config.domain, self.config.step, self.config.session)
                       for f in self.config.functions}
            summary = pd.DataFrame.from_records([r["summary"] for r in reports.values()])
            out = None
            if self.config.out:
                out = Path(self.config.out)
                out.parent.mkdir(parents=True, exist_ok=True)
                summary.to_csv(out, index=False)
                for name, report in reports.items():
                    write_profile_csv(report["profile"], out.with_name(f"{out.stem}_{name}_profile.csv"), name)
                logger.info(f"Wrote approximation summary to {out}")
            results = {
                "timestamp": datetime.utcnow().isoformat(),
                "summary": summary,
                "profiles": {name: r["profile"] for name, r in reports.items()},
                "out": str(out) if out else None,
            }
            logger.info(f"Approximation report completed for {len(reports)} functions")
            return results
        except Exception as e:
            logger.error(f"Error in approximation report: {e}")
            raise

    async def cleanup(self):
        logger.info("Approximation workflow cleaned up")


async def run_approx(config: ApproxConfig) -> Dict[str, Any]:
    workflow = ApproxWorkflow(config)
    await workflow.initialize()
    try:
        return await workflow.run()
    finally:
        await workflow.cleanup()
