"""Point-mass swarm simulation, formation metrics and the composite reward.

Kinematics per step: every UAV flies straight toward its target at
min(speed, v_max), stopping on arrival. Obstacle boxes are impassable (motion
ends on the box face and an avoidance event is counted once per blockage).
No-fly boxes may be entered but each step spent inside counts as a violation.
Pairs closer than COLLISION_RADIUS count as collisions.
"""

import logging
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..core.errors import ShapeError, ValidationError
from ..core.types import (
    Box, CommandAst, FormationReport, Modifier, RewardNormalizers, RewardWeights, SwarmState, UavState, Vec3, Verb,
)

logger = logging.getLogger(__name__)

COLLISION_RADIUS = 0.5
DEFAULT_SPEED = 5.0
LOW_POWER_FRACTION = 0.5
ARRIVAL_EPS = 1e-9

Commands = Union[CommandAst, Sequence[Optional[CommandAst]], Mapping[int, CommandAst]]


def formation_slots(n: int, spacing: float) -> np.ndarray:
    """Line-formation offsets: slot i sits (i - (n-1)/2) * spacing along y."""
    offsets = np.zeros((n, 3))
    offsets[:, 1] = (np.arange(n) - (n - 1) / 2.0) * spacing
    return offsets


def _command_for(commands: Optional[Commands], index: int, uav: UavState) -> Optional[CommandAst]:
    if commands is None or isinstance(commands, CommandAst):
        return commands
    if isinstance(commands, Mapping):
        return commands.get(uav.id)
    return commands[index] if index < len(commands) else None


def _target(state: SwarmState, index: int, cmd: Optional[CommandAst], slots: np.ndarray) -> tuple:
    uav = state.uavs[index]
    here = np.asarray(uav.position, dtype=float)
    if cmd is None or cmd.verb is Verb.HOLD:
        return here, 0.0
    in_formation = Modifier.MAINTAIN_FORMATION in cmd.modifiers
    offset = slots[index] if in_formation else np.zeros(3)
    speed = cmd.speed if cmd.speed > 0 else DEFAULT_SPEED
    if cmd.verb in (Verb.MOVE_TO, Verb.SCAN):
        goal = np.asarray(cmd.position, dtype=float) + offset
    elif cmd.verb is Verb.RETURN_HOME:
        goal = np.asarray(uav.home if uav.home is not None else (0.0, 0.0, 0.0), dtype=float) + offset
    else:
        leader = next((i for i, u in enumerate(state.uavs) if u.id == cmd.target), None)
        if leader is None or leader == index:
            return here, 0.0
        goal = np.asarray(state.uavs[leader].position, dtype=float) + slots[index] - slots[leader]
    if Modifier.LOW_POWER in cmd.modifiers:
        speed = min(speed, LOW_POWER_FRACTION * state.v_max)
    return goal, min(speed, state.v_max)


def segment_entry(start: np.ndarray, delta: np.ndarray, box: Box) -> Optional[float]:
    """Fraction t in [0, 1] where start + t * delta first enters the open box interior, if it does."""
    lo, hi = np.asarray(box.min, dtype=float), np.asarray(box.max, dtype=float)
    t_near, t_far = -np.inf, np.inf
    for axis in range(3):
        if abs(delta[axis]) < 1e-15:
            if not lo[axis] < start[axis] < hi[axis]:
                return None
            continue
        t1 = (lo[axis] - start[axis]) / delta[axis]
        t2 = (hi[axis] - start[axis]) / delta[axis]
        t_near = max(t_near, min(t1, t2))
        t_far = min(t_far, max(t1, t2))
    if t_near >= t_far or t_far <= 0 or t_near > 1:
        return None
    return max(t_near, 0.0)


def swarm_step(state: SwarmState, commands: Optional[Commands], dt: float,
               rng: Optional[np.random.Generator] = None) -> SwarmState:
    """Advance the swarm by ``dt`` seconds under per-UAV (or one swarm-wide) commands."""
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    slots = formation_slots(len(state.uavs), state.formation.spacing)
    avoidance = state.avoidance_events
    energy = state.energy_used
    moved: List[UavState] = []

    for index, uav in enumerate(state.uavs):
        here = np.asarray(uav.position, dtype=float)
        goal, speed = _target(state, index, _command_for(commands, index, uav), slots)
        gap = goal - here
        distance = float(np.linalg.norm(gap))
        step = min(speed * dt, distance) if uav.battery > 0 else 0.0
        delta = gap / distance * step if distance > ARRIVAL_EPS else np.zeros(3)

        blocked = False
        entries = [t for t in (segment_entry(here, delta, box) for box in state.obstacles) if t is not None]
        if entries:
            delta = delta * min(entries)
            blocked = True
            if not uav.blocked:
                avoidance += 1
                logger.debug(f"UAV {uav.id} blocked by an obstacle at t={state.time:.2f}")

        flown = float(np.linalg.norm(delta))
        drain = state.drain_per_meter * flown
        energy += drain
        position = here + delta
        measured = None
        if state.noise_sigma > 0 and rng is not None:
            noise = rng.normal(0.0, state.noise_sigma / np.sqrt(3.0), size=3)
            measured = tuple(float(v) for v in position + noise)
        moved.append(uav.model_copy(update={
            "position": tuple(float(v) for v in position),
            "velocity": tuple(float(v) for v in delta / dt),
            "battery": max(0.0, uav.battery - drain),
            "measured": measured,
            "blocked": blocked,
        }))

    points = np.array([u.position for u in moved]) if moved else np.zeros((0, 3))
    collisions = sum(
        1 for i, j in combinations(range(len(moved)), 2)
        if np.linalg.norm(points[i] - points[j]) < COLLISION_RADIUS
    )
    violations = sum(1 for u in moved for box in state.nofly if box.contains(u.position))
    return state.model_copy(update={
        "uavs": moved,
        "time": state.time + dt,
        "avoidance_events": avoidance,
        "collisions": state.collisions + collisions,
        "nofly_violations": state.nofly_violations + violations,
        "energy_used": energy,
    })


def formation_metrics(trace: Sequence[SwarmState],
                      planned: Optional[Sequence[Sequence[Vec3]]] = None) -> FormationReport:
    """Trajectory error, formation RMS and avoidance success over a trace.

    ``planned`` holds one list of per-UAV positions for every state of the
    trace. The target distance of a pair is its line-formation slot distance.
    """
    if not trace:
        raise ShapeError("trace must not be empty")
    observed = np.array([[u.observed for u in s.uavs] for s in trace], dtype=float)
    if planned is not None:
        plan = np.asarray(planned, dtype=float)
        if plan.shape != observed.shape:
            raise ShapeError(f"plan of shape {plan.shape} does not match trace {observed.shape}")
        trajectory_error = float(np.linalg.norm(observed - plan, axis=-1).mean())
    else:
        trajectory_error = 0.0

    n = observed.shape[1]
    if n >= 2:
        spacing = trace[0].formation.spacing
        i, j = np.triu_indices(n, k=1)
        actual = np.linalg.norm(observed[:, i] - observed[:, j], axis=-1)
        target = np.abs(i - j) * spacing
        formation_rms = float(np.sqrt(np.mean((actual - target) ** 2)))
    else:
        formation_rms = 0.0

    last = trace[-1]
    if last.avoidance_events:
        success = 1.0 - last.collisions / last.avoidance_events
    else:
        success = 1.0 if last.collisions == 0 else 0.0
    return FormationReport(
        trajectory_error=trajectory_error,
        formation_rms=formation_rms,
        avoidance_success=float(np.clip(success, 0.0, 1.0)),
        avoidance_events=last.avoidance_events,
        collisions=last.collisions,
        nofly_violations=last.nofly_violations,
        energy_used=last.energy_used,
        steps=len(trace),
    )


def reward_components(report: FormationReport, normalizers: RewardNormalizers = RewardNormalizers()) -> Dict[str, float]:
    def clamp(v: float) -> float:
        return float(min(max(v, 0.0), 1.0))

    return {
        "navigation": 1.0 - clamp(report.trajectory_error / normalizers.trajectory_error_m),
        "safety": 1.0 - clamp(report.collisions + report.nofly_violations),
        "efficiency": 1.0 - clamp(report.energy_used / normalizers.energy_budget),
        "formation": 1.0 - clamp(report.formation_rms / normalizers.formation_rms_m),
    }


def reward_score(trace: Union[Sequence[SwarmState], FormationReport], weights: RewardWeights = RewardWeights(),
                 normalizers: RewardNormalizers = RewardNormalizers(),
                 planned: Optional[Sequence[Sequence[Vec3]]] = None) -> float:
    """Weighted sum of navigation, safety, efficiency and formation components."""
    report = trace if isinstance(trace, FormationReport) else formation_metrics(trace, planned)
    parts = reward_components(report, normalizers)
    return (weights.navigation * parts["navigation"] + weights.safety * parts["safety"]
            + weights.efficiency * parts["efficiency"] + weights.formation * parts["formation"])


def simulate(initial: SwarmState, schedule: Sequence[tuple], duration: float, dt: float,
             rng: Optional[np.random.Generator] = None) -> List[SwarmState]:
    """Trace from ``initial`` where ``schedule`` is [(start_time, commands), ...] sorted by time."""
    if dt <= 0 or duration < 0:
        raise ValidationError("dt must be positive and duration non-negative")
    trace = [initial]
    state = initial
    active = None
    pending = list(schedule)
    for k in range(int(round(duration / dt))):
        now = k * dt
        while pending and pending[0][0] <= now + 1e-9:
            active = pending.pop(0)[1]
        state = swarm_step(state, active, dt, rng)
        trace.append(state)
    return trace
