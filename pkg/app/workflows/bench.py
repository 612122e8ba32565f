"""
Benchmark Workflow

Measures encrypted inference cost as the swarm grows:
- every UAV of a swarm of size n runs its own three-party session in parallel
- each session evaluates one fixed prompt (forward pass plus a revealed argmax)
- bytes, rounds and messages come from the session accounting; wall time is the
  median over repetitions
- rows are written as CSV (schema bench/v1) and optionally recorded in the ledger
"""

import asyncio
import logging
import statistics
import time
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..adapters.weights import resolve_model
from ..core.errors import ValidationError
from ..core.hashing import derive_seed
from ..core.store import Store
from ..core.types import BenchRow, CommReport, ModelConfig, Phase, SessionConfig, TransportKind
from ..mpc.network import establish_session
from ..mpc.nn import ModelWeights, UAV_NODE, embed_tokens, secure_forward
from ..mpc.protocols import SecureOps, argmax_protocol
from ..swarm.vocabulary import Vocabulary

logger = logging.getLogger(__name__)

BENCH_SCHEMA = "bench/v1"
BENCH_PROMPT = "movement detected at coordinates (10, 10), visibility 85%, battery level 72%"

# computation ms and communication KB reported for a GPT-2 deployment; shown for context only
REPORTED_COSTS: Dict[int, Tuple[float, float]] = {
    2: (520.53, 864.0),
    3: (780.78, 1286.0),
    4: (1041.05, 1726.0),
}


@dataclass
class BenchConfig:
    """Configuration for the swarm-size benchmark."""
    swarm_sizes: List[int] = field(default_factory=lambda: list(range(1, 9)))
    reps: int = 3
    seed: int = 7
    model_path: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    prompt: str = BENCH_PROMPT
    prompt_tokens: int = 8
    out: Optional[str] = None
    database_url: Optional[str] = None


def fixed_prompt(text: str, n_tokens: int, vocabulary: Optional[Vocabulary] = None) -> np.ndarray:
    """The last ``n_tokens`` ids of ``text`` followed by <cmd>."""
    vocabulary = vocabulary or Vocabulary()
    ids = vocabulary.prompt(text)
    return np.asarray(ids[-n_tokens:], dtype=np.int64)


def run_uav_session(weights: ModelWeights, config: SessionConfig, prompt: np.ndarray) -> Tuple[CommReport, float]:
    """One UAV's encrypted inference of the fixed workload; returns its accounting and wall ms."""
    session = establish_session(config)
    try:
        ops = SecureOps(session)
        start = time.perf_counter()
        x = embed_tokens(ops, prompt, weights, owner=UAV_NODE)
        logits = secure_forward(ops, x, weights)
        with ops.phase(Phase.ARGMAX):
            index, _ = argmax_protocol(ops, logits[..., -1, :])
        ops.reveal(index, to=UAV_NODE)
        return session.report(), (time.perf_counter() - start) * 1000.0
    finally:
        session.close()


def session_config_for(base: SessionConfig, seed: int, uav: int, model_digest: str) -> SessionConfig:
    update: Dict[str, Any] = {"seed": derive_seed(seed, f"uav:{uav}"), "model_digest": model_digest}
    if base.transport is TransportKind.TCP:
        update["base_port"] = base.base_port + 3 * uav
    return base.model_copy(update=update)


def aggregate_reports(size: int, seed: int, reports: Sequence[CommReport], times_ms: Sequence[float]) -> BenchRow:
    """One row from the per-UAV reports of every repetition (bytes from the first repetition)."""
    pair_bytes: Dict[str, int] = defaultdict(int)
    for report in reports:
        for t in report.traffic:
            pair_bytes[f"P{min(t.sender, t.receiver)}-P{max(t.sender, t.receiver)}"] += t.bytes_sent
    per_pair = {k: round(v / 1024.0, 3) for k, v in sorted(pair_bytes.items())}
    return BenchRow(
        swarm_size=size,
        computation_ms=round(statistics.median(times_ms), 3),
        comm_kb_total=round(sum(per_pair.values()), 3),
        comm_kb_per_pair=per_pair,
        rounds=max(r.rounds for r in reports),
        seed=seed,
        comm_bytes=sum(r.total_bytes for r in reports),
    )


def bench_frame(rows: Sequence[BenchRow]) -> pd.DataFrame:
    records = []
    for row in rows:
        record = {"schema": BENCH_SCHEMA, **row.model_dump(exclude={"comm_kb_per_pair"})}
        record.update({f"comm_kb_{pair}": kb for pair, kb in row.comm_kb_per_pair.items()})
        records.append(record)
    return pd.DataFrame.from_records(records)


def affine_fit(sizes: Sequence[float], values: Sequence[float]) -> Dict[str, float]:
    """Least-squares line through (size, value) and its coefficient of determination."""
    x, y = np.asarray(sizes, dtype=float), np.asarray(values, dtype=float)
    if len(x) < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "r2": float("nan")}
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sum((y - (slope * x + intercept)) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - residual / total if total > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


class BenchWorkflow:
    """Workflow for the swarm-size scaling benchmark."""

    def __init__(self, config: BenchConfig):
        self.config = config
        self.weights: Optional[ModelWeights] = None
        self.prompt: Optional[np.ndarray] = None
        self.store: Optional[Store] = None

    async def initialize(self):
        """Load the model and fix the prompt workload."""
        logger.info("Initializing bench workflow...")
        if not self.config.swarm_sizes or min(self.config.swarm_sizes) < 1:
            raise ValidationError("swarm sizes must be positive")
        if self.config.reps < 1:
            raise ValidationError("reps must be at least 1")
        self.weights = resolve_model(self.config.model_path, self.config.model, self.config.seed)
        self.prompt = fixed_prompt(self.config.prompt, self.config.prompt_tokens)
        if self.config.database_url:
            self.store = Store(self.config.database_url)
            self.store.create_all()
        logger.info(f"Bench workflow initialized: sizes {self.config.swarm_sizes}, {self.config.reps} reps")

    async def _run_size(self, size: int) -> BenchRow:
        digest = self.weights.digest()
        configs = [session_config_for(self.config.session, self.config.seed, uav, digest) for uav in range(size)]
        times: List[float] = []
        first: List[CommReport] = []
        for rep in range(self.config.reps):
            start = time.perf_counter()
            results = await asyncio.gather(*[
                asyncio.to_thread(run_uav_session, self.weights, cfg, self.prompt) for cfg in configs
            ])
            times.append((time.perf_counter() - start) * 1000.0)
            if rep == 0:
                first = [report for report, _ in results]
        row = aggregate_reports(size, self.config.seed, first, times)
        logger.info(f"Swarm size {size}: {row.computation_ms:.1f} ms, {row.comm_kb_total:.1f} KB, {row.rounds} rounds")
        return row

    async def run(self) -> Dict[str, Any]:
        """Run every swarm size and write the CSV."""
        logger.info("Starting benchmark...")
        try:
            rows = [await self._run_size(size) for size in sorted(set(self.config.swarm_sizes))]
            fit = affine_fit([r.swarm_size for r in rows], [r.comm_kb_total for r in rows])
            out = None
            if self.config.out:
                out = Path(self.config.out)
                out.parent.mkdir(parents=True, exist_ok=True)
                bench_frame(rows).to_csv(out, index=False)
                logger.info(f"Wrote {len(rows)} rows to {out}")
            if self.store is not None:
                self.store.record_bench_rows(
                    rows, transport=self.config.session.transport.value,
                    fractional_bits=self.config.session.fixed_point.fractional_bits,
                    meta={"model_digest": self.weights.digest()},
                )
            results = {
                "timestamp": datetime.utcnow().isoformat(),
                "rows": rows,
                "comm_fit": fit,
                "out": str(out) if out else None,
                "reported": REPORTED_COSTS,
            }
            logger.info(f"Benchmark completed: comm R^2 = {fit['r2']:.6f}")
            return results
        except Exception as e:
            logger.error(f"Error in benchmark: {e}")
            raise

    async def cleanup(self):
        if self.store is not None:
            self.store.engine.dispose()
        logger.info("Bench workflow cleaned up")


async def run_bench(config: BenchConfig) -> Dict[str, Any]:
    workflow = BenchWorkflow(config)
    await workflow.initialize()
    try:
        return await workflow.run()
    finally:
        await workflow.cleanup()
