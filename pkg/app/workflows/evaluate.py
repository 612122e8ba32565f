"""
Evaluation Workflow

Scores the command agent against a sensor/command dataset:
- each sensor text goes through the agent (encrypted or plaintext)
- the generated command is compared with the reference by token cosine similarity
- the parse rate counts generations that finished and satisfy the grammar
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from ..adapters.dataset import load_dataset
from ..adapters.weights import resolve_model
from ..agents.commander import CommandAgent
from ..core.errors import ParseError, ValidationError
from ..core.types import ModelConfig, SessionConfig
from ..swarm.commands import token_cosine_similarity

logger = logging.getLogger(__name__)

EVAL_SCHEMA = "eval/v1"


@dataclass
class EvaluateConfig:
    dataset: str = ""
    mode: str = "plaintext"
    limit: Optional[int] = None
    model_path: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    model_seed: int = 0
    session: SessionConfig = field(default_factory=SessionConfig)
    v_max: float = 15.0
    out: Optional[str] = None


def run_evaluate(config: EvaluateConfig) -> Dict[str, Any]:
    """Mean similarity and parse rate of generated commands over the dataset."""
    records = load_dataset(config.dataset)
    if config.limit is not None:
        records = records[:config.limit]
    if not records:
        raise ValidationError(f"dataset {config.dataset} has no records")
    weights = resolve_model(config.model_path, config.model, config.model_seed)
    agent = CommandAgent(weights, mode=config.mode, session_config=config.session, v_max=config.v_max)
    generations = agent.run([sensor for sensor, _ in records])

    rows: List[Dict[str, Any]] = []
    for (sensor, reference), gen in zip(records, generations):
        try:
            gen.parse(config.v_max)
            parsed = True
        except (ParseError, ValidationError):
            parsed = False
        rows.append({
            "schema": EVAL_SCHEMA, "sensor": sensor, "reference": reference, "generated": gen.text,
            "similarity": token_cosine_similarity(gen.text, reference), "parsed": parsed,
            "latency_ms": gen.latency_ms, "comm_kb": gen.comm.total_kb if gen.comm is not None else 0.0,
        })
    frame = pd.DataFrame.from_records(rows)
    out = None
    if config.out:
        out = Path(config.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False)
    summary = {
        "records": len(rows),
        "mean_similarity": float(frame["similarity"].mean()),
        "parse_rate": float(frame["parsed"].mean()),
    }
    logger.info(f"Evaluated {summary['records']} records [{config.mode}]: similarity "
                f"{summary['mean_similarity']:.3f}, parse rate {summary['parse_rate']:.2f}")
    return {"summary": summary, "rows": frame, "out": str(out) if out else None}
