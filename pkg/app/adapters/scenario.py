"""Scenario files (JSON) for end-to-end swarm runs.

Example::

    {
      "name": "line-4",
      "dt": 0.1, "duration": 20.0, "noise_sigma": 0.0,
      "formation": {"spacing": 5.0},
      "uavs": [{"id": 0, "position": [0, -7.5, -10]}, ...],
      "obstacles": [{"min": [20, -2, -30], "max": [22, 2, 0]}],
      "nofly": [],
      "events": [
        {"time": 0.0,
         "sensor": "movement detected at coordinates (10, 10), visibility 85%, battery level 72%",
         "command": "move to position (10, 10, -25) at 5 m/s, maintain formation spacing"}
      ]
    }

``planned`` optionally lists per-step, per-UAV positions; without it the plan
is the noise-free execution of the scripted commands.
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import orjson
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, model_validator

from ..core.errors import FormatError
from ..core.types import Box, FormationSpec, SwarmState, UavState, Vec3

logger = logging.getLogger(__name__)


class ScenarioEvent(BaseModel):
    """A sensor report arriving at ``time`` and the command that should answer it."""
    time: float = Field(ge=0)
    sensor: str
    command: str


class ScenarioSpec(BaseModel):
    name: str
    dt: float = Field(default=0.1, gt=0)
    duration: float = Field(gt=0)
    seed: int = 0
    noise_sigma: float = Field(default=0.0, ge=0)
    v_max: float = Field(default=15.0, gt=0)
    drain_per_meter: float = Field(default=0.05, ge=0)
    energy_budget: float = Field(default=100.0, gt=0)
    formation: FormationSpec = FormationSpec()
    uavs: List[UavState] = Field(min_length=1)
    obstacles: List[Box] = Field(default_factory=list)
    nofly: List[Box] = Field(default_factory=list)
    events: List[ScenarioEvent] = Field(min_length=1)
    planned: Optional[List[List[Vec3]]] = None

    @model_validator(mode="after")
    def _ordered_events(self) -> "ScenarioSpec":
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ValueError("events must be sorted by time")
        return self

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def initial_state(self) -> SwarmState:
        uavs = [u if u.home is not None else u.model_copy(update={"home": u.position}) for u in self.uavs]
        return SwarmState(
            uavs=uavs, formation=self.formation, obstacles=self.obstacles, nofly=self.nofly,
            v_max=self.v_max, noise_sigma=self.noise_sigma, drain_per_meter=self.drain_per_meter,
        )


def _field_name(exc: PydanticValidationError) -> str:
    loc = exc.errors()[0]["loc"]
    return ".".join(str(part) for part in loc) or "<root>"


def parse_scenario(blob: Union[bytes, str], source: str = "<memory>") -> ScenarioSpec:
    try:
        data = orjson.loads(blob)
    except orjson.JSONDecodeError as exc:
        raise FormatError(f"{source} is not valid JSON: {exc}") from exc
    try:
        return ScenarioSpec.model_validate(data)
    except PydanticValidationError as exc:
        field = _field_name(exc)
        raise FormatError(f"{source}: invalid field '{field}': {exc.errors()[0]['msg']}", field=field) from exc


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read scenario {path}: {exc}", field="path") from exc
    spec = parse_scenario(blob, source=str(path))
    logger.info(f"Loaded scenario '{spec.name}': {len(spec.uavs)} UAVs, {len(spec.events)} events")
    return spec


def save_scenario(spec: ScenarioSpec, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(spec.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
    return path
