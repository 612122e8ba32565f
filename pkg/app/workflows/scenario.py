"""
Scenario Workflow

Runs swarm scenarios end to end:
- sensor reports are turned into commands (encrypted or plaintext model, or the
  scripted ground truth)
- commands are parsed, executed in the simulator and scored
- similarity against the scripted commands, formation metrics and the reward
  are reported and written as CSV (schema scenario/v1)
"""

import asyncio
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..adapters.scenario import ScenarioSpec, load_scenario
from ..adapters.weights import resolve_model
from ..agents.commander import CommandAgent
from ..core.errors import ParseError, ValidationError
from ..core.store import Store
from ..core.types import (
    CommandAst, ModelConfig, RewardNormalizers, RewardWeights, ScenarioReport, SessionConfig, SwarmState,
    TransportKind, Vec3,
)
from ..mpc.nn import ModelWeights
from ..swarm.commands import parse_command, render_command, token_cosine_similarity
from ..swarm.simulator import formation_metrics, reward_score, simulate

logger = logging.getLogger(__name__)

SCENARIO_SCHEMA = "scenario/v1"
SCENARIO_MODES = ("encrypted", "plaintext", "scripted")


@dataclass
class ScenarioConfig:
    """Configuration for scenario runs."""
    scenarios: List[str] = field(default_factory=list)
    mode: str = "encrypted"
    model_path: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    model_seed: int = 0
    session: SessionConfig = field(default_factory=SessionConfig)
    shared_weights: bool = False
    weights: RewardWeights = field(default_factory=RewardWeights)
    out: Optional[str] = None
    database_url: Optional[str] = None


def scripted_commands(spec: ScenarioSpec) -> List[CommandAst]:
    asts = []
    for index, event in enumerate(spec.events):
        try:
            asts.append(parse_command(event.command, spec.v_max))
        except ParseError as exc:
            raise ParseError(f"scenario '{spec.name}' event {index} command: {exc}", exc.offset, exc.text) from exc
    return asts


def planned_positions(spec: ScenarioSpec, scripted: Sequence[CommandAst]) -> List[List[Vec3]]:
    """The scenario plan, or the noise-free execution of the scripted commands."""
    if spec.planned is not None:
        return [list(step) for step in spec.planned]
    initial = spec.initial_state().model_copy(update={"noise_sigma": 0.0})
    schedule = [(event.time, ast) for event, ast in zip(spec.events, scripted)]
    trace = simulate(initial, schedule, spec.duration, spec.dt)
    return [[u.position for u in state.uavs] for state in trace]


def execute(spec: ScenarioSpec, commands: Sequence[CommandAst]) -> List[SwarmState]:
    rng = np.random.default_rng(spec.seed)
    schedule = [(event.time, ast) for event, ast in zip(spec.events, commands)]
    return simulate(spec.initial_state(), schedule, spec.duration, spec.dt, rng)


def generate_commands(spec: ScenarioSpec, config: ScenarioConfig, weights: ModelWeights,
                      session: SessionConfig) -> Tuple[List[str], List[CommandAst], float]:
    """Model-generated command texts and ASTs plus the communication they cost (KB)."""
    agent = CommandAgent(weights, mode=config.mode, session_config=session, v_max=spec.v_max,
                         shared_weights=config.shared_weights)
    generations = agent.run([event.sensor for event in spec.events])
    asts = []
    for index, gen in enumerate(generations):
        try:
            asts.append(gen.parse(spec.v_max))
        except ParseError as exc:
            raise ParseError(f"scenario '{spec.name}' event {index} generated '{gen.text}': {exc}",
                             exc.offset, exc.text) from exc
    comm_kb = sum(gen.comm.total_kb for gen in generations if gen.comm is not None)
    return [gen.text for gen in generations], asts, comm_kb


def score_scenario(spec: ScenarioSpec, config: ScenarioConfig, weights: Optional[ModelWeights],
                   session: SessionConfig) -> ScenarioReport:
    scripted = scripted_commands(spec)
    scripted_text = [render_command(ast) for ast in scripted]
    if config.mode == "scripted":
        texts, commands, comm_kb = list(scripted_text), scripted, 0.0
    else:
        texts, commands, comm_kb = generate_commands(spec, config, weights, session)

    trace = execute(spec, commands)
    report = formation_metrics(trace, planned_positions(spec, scripted))
    reward = reward_score(report, config.weights, RewardNormalizers(energy_budget=spec.energy_budget))
    similarity = float(np.mean([token_cosine_similarity(a, b) for a, b in zip(texts, scripted_text)]))
    logger.info(f"Scenario '{spec.name}' [{config.mode}]: similarity {similarity:.3f}, "
                f"trajectory error {report.trajectory_error:.3f} m, reward {reward:.3f}")
    return ScenarioReport(
        scenario=spec.name, mode=config.mode, commands=texts, scripted=scripted_text,
        similarity=similarity, formation=report, reward=reward, comm_kb=round(comm_kb, 1),
    )


def scenario_frame(reports: Sequence[ScenarioReport]) -> pd.DataFrame:
    records = []
    for r in reports:
        records.append({
            "schema": SCENARIO_SCHEMA,
            "scenario": r.scenario,
            "mode": r.mode,
            "similarity": r.similarity,
            "reward": r.reward,
            "comm_kb": r.comm_kb,
            **r.formation.model_dump(),
            "commands": " | ".join(r.commands),
            "created_at": r.created_at.isoformat(),
        })
    return pd.DataFrame.from_records(records)


class ScenarioWorkflow:
    """Workflow for end-to-end scenario evaluation."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.specs: List[ScenarioSpec] = []
        self.weights: Optional[ModelWeights] = None
        self.store: Optional[Store] = None

    async def initialize(self):
        """Load and validate scenarios and the model."""
        logger.info("Initializing scenario workflow...")
        if self.config.mode not in SCENARIO_MODES:
            raise ValidationError(f"mode must be one of {SCENARIO_MODES}, got '{self.config.mode}'")
        if not self.config.scenarios:
            raise ValidationError("no scenario files given")
        self.specs = [load_scenario(path) for path in self.config.scenarios]
        if self.config.mode != "scripted":
            self.weights = resolve_model(self.config.model_path, self.config.model, self.config.model_seed)
        if self.config.database_url:
            self.store = Store(self.config.database_url)
            self.store.create_all()
        logger.info(f"Scenario workflow initialized with {len(self.specs)} scenarios ({self.config.mode})")

    def _session_for(self, index: int) -> SessionConfig:
        base = self.config.session
        if base.transport is TransportKind.TCP:
            return base.model_copy(update={"base_port": base.base_port + 3 * index})
        return base

    async def run(self) -> Dict[str, Any]:
        """Run all scenarios concurrently and write the CSV."""
        logger.info("Starting scenario runs...")
        try:
            reports = await asyncio.gather(*[
                asyncio.to_thread(score_scenario, spec, self.config, self.weights, self._session_for(i))
                for i, spec in enumerate(self.specs)
            ])
            out = None
            if self.config.out:
                out = Path(self.config.out)
                out.parent.mkdir(parents=True, exist_ok=True)
                scenario_frame(reports).to_csv(out, index=False)
                logger.info(f"Wrote {len(reports)} scenario rows to {out}")
            if self.store is not None:
                for spec, report in zip(self.specs, reports):
                    self.store.record_scenario(report, seed=spec.seed)
            results = {
                "timestamp": datetime.utcnow().isoformat(),
                "reports": list(reports),
                "out": str(out) if out else None,
            }
            logger.info(f"Scenario runs completed: {len(reports)} reports")
            return results
        except Exception as e:
            logger.error(f"Error in scenario run: {e}")
            raise

    async def cleanup(self):
        if self.store is not None:
            self.store.engine.dispose()
        logger.info("Scenario workflow cleaned up")


async def run_scenario(config: ScenarioConfig) -> Dict[str, Any]:
    workflow = ScenarioWorkflow(config)
    await workflow.initialize()
    try:
        return await workflow.run()
    finally:
        await workflow.cleanup()
