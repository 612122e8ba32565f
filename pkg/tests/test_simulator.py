"""Tests for the point-mass swarm simulator, formation metrics and reward."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.errors import ShapeError, ValidationError
from app.core.types import Box, CommandAst, Modifier, RewardWeights, SwarmState, UavState, Verb
from app.swarm.commands import parse_command
from app.swarm.simulator import (
    formation_metrics, formation_slots, reward_components, reward_score, segment_entry, simulate, swarm_step,
)


def swarm(*positions, **kwargs) -> SwarmState:
    return SwarmState(uavs=[UavState(id=i, position=p) for i, p in enumerate(positions)], **kwargs)


class TestKinematics:
    """Straight-line flight toward the commanded target."""

    def test_hold_stays_put(self):
        """Hold and missing commands leave positions unchanged."""
        state = swarm((1.0, 2.0, -3.0), (4.0, 5.0, -6.0))
        after = swarm_step(state, [CommandAst(verb=Verb.HOLD), None], 1.0)
        assert [u.position for u in after.uavs] == [(1.0, 2.0, -3.0), (4.0, 5.0, -6.0)]
        assert after.time == 1.0
        assert after.energy_used == 0.0

    def test_move_at_speed(self):
        """Each step covers speed * dt and stops on arrival."""
        state = swarm((0.0, 0.0, 0.0))
        cmd = parse_command("move to (10, 0, 0) at 5 m/s")
        one = swarm_step(state, cmd, 1.0)
        assert one.uavs[0].position == pytest.approx((5.0, 0.0, 0.0))
        assert one.uavs[0].velocity == pytest.approx((5.0, 0.0, 0.0))
        assert one.uavs[0].battery == pytest.approx(100.0 - 0.05 * 5.0)
        three = swarm_step(swarm_step(one, cmd, 1.0), cmd, 1.0)
        assert three.uavs[0].position == pytest.approx((10.0, 0.0, 0.0))
        assert three.energy_used == pytest.approx(0.5)

    def test_speed_caps(self):
        """Speed is limited by v_max and halved under low power."""
        state = swarm((0.0, 0.0, 0.0), v_max=10.0)
        fast = swarm_step(state, CommandAst(verb=Verb.MOVE_TO, position=(100, 0, 0), speed=15), 1.0)
        assert fast.uavs[0].position[0] == pytest.approx(10.0)
        slow = swarm_step(state, parse_command("move to (100, 0, 0) at 10 m/s, low power"), 1.0)
        assert slow.uavs[0].position[0] == pytest.approx(5.0)

    def test_default_speed_and_home(self):
        """Return home without a speed flies at the default speed."""
        state = SwarmState(uavs=[UavState(id=0, position=(0.0, 20.0, 0.0), home=(0.0, 0.0, 0.0))])
        after = swarm_step(state, parse_command("return home"), 1.0)
        assert after.uavs[0].position == pytest.approx((0.0, 15.0, 0.0))

    def test_commands_by_id(self):
        """A mapping addresses UAVs by id."""
        state = SwarmState(uavs=[UavState(id=7, position=(0, 0, 0)), UavState(id=9, position=(0, 10, 0))])
        after = swarm_step(state, {9: parse_command("move to (0, 20, 0) at 2 m/s")}, 1.0)
        assert after.uavs[0].position == (0.0, 0.0, 0.0)
        assert after.uavs[1].position == pytest.approx((0.0, 12.0, 0.0))

    def test_follow_keeps_slot_offset(self):
        """A follower heads for the leader's position shifted by the slot difference."""
        state = swarm((0.0, 0.0, 0.0), (0.0, 5.0, 0.0))
        after = swarm_step(state, [None, parse_command("follow uav 0 at 10 m/s")], 1.0)
        assert after.uavs[1].position == pytest.approx((0.0, 5.0, 0.0))

    def test_formation_modifier(self):
        """maintain formation sends each UAV to its own slot around the point."""
        state = swarm((0.0, -2.5, 0.0), (0.0, 2.5, 0.0))
        cmd = parse_command("move to (10, 0, 0) at 15 m/s, maintain formation spacing")
        after = swarm_step(state, cmd, 1.0)
        assert after.uavs[0].position == pytest.approx((10.0, -2.5, 0.0))
        assert after.uavs[1].position == pytest.approx((10.0, 2.5, 0.0))

    def test_nonpositive_dt(self):
        """dt must be positive."""
        with pytest.raises(ValidationError):
            swarm_step(swarm((0, 0, 0)), None, 0.0)

    def test_slots(self):
        """Slots are centred on the formation point."""
        assert formation_slots(3, 5.0)[:, 1].tolist() == [-5.0, 0.0, 5.0]


class TestHazards:
    """Obstacles, no-fly zones and collisions."""

    @pytest.fixture
    def wall(self):
        return Box(min=(4.0, -1.0, -1.0), max=(6.0, 1.0, 1.0))

    def test_segment_entry(self, wall):
        """Entry fraction along a segment, or None when it misses."""
        assert segment_entry(np.zeros(3), np.array([5.0, 0, 0]), wall) == pytest.approx(0.8)
        assert segment_entry(np.zeros(3), np.array([3.0, 0, 0]), wall) is None
        assert segment_entry(np.array([0, 5.0, 0]), np.array([10.0, 0, 0]), wall) is None

    def test_obstacle_blocks_once(self, wall):
        """Motion stops on the face and the blockage counts one avoidance event."""
        state = swarm((0.0, 0.0, 0.0), obstacles=[wall])
        cmd = parse_command("move to (10, 0, 0) at 5 m/s, avoid obstacles")
        trace = simulate(state, [(0.0, cmd)], duration=3.0, dt=1.0)
        assert trace[-1].uavs[0].position == pytest.approx((4.0, 0.0, 0.0))
        assert trace[-1].avoidance_events == 1
        report = formation_metrics(trace)
        assert report.avoidance_success == 1.0

    def test_nofly_violations(self):
        """Every step spent inside a no-fly box is a violation."""
        zone = Box(min=(-1.0, -1.0, -1.0), max=(1.0, 1.0, 1.0))
        trace = simulate(swarm((0.0, 0.0, 0.0), nofly=[zone]), [], duration=3.0, dt=1.0)
        assert trace[-1].nofly_violations == 3

    def test_collisions(self):
        """Pairs closer than the collision radius collide every step."""
        trace = simulate(swarm((0.0, 0.0, 0.0), (0.2, 0.0, 0.0)), [], duration=2.0, dt=1.0)
        assert trace[-1].collisions == 2
        assert formation_metrics(trace).avoidance_success == 0.0


class TestMetrics:
    """Formation quality and reward."""

    @pytest.fixture
    def trace(self):
        return [swarm((0.0, 0.0, 0.0), (0.0, 4.0, 0.0)), swarm((0.0, 0.0, 0.0), (0.0, 6.0, 0.0))]

    def test_formation_rms(self, trace):
        """Pair distances 4 and 6 against spacing 5 give an RMS of 1."""
        report = formation_metrics(trace)
        assert report.formation_rms == pytest.approx(1.0)
        assert report.trajectory_error == 0.0
        assert report.steps == 2

    def test_reward(self, trace):
        """Only the formation term is penalized: 0.75 + 0.25 * 0.5."""
        assert reward_score(trace) == pytest.approx(0.875)
        parts = reward_components(formation_metrics(trace))
        assert parts == pytest.approx({"navigation": 1.0, "safety": 1.0, "efficiency": 1.0, "formation": 0.5})
        weights = RewardWeights(navigation=0.0, safety=0.0, efficiency=0.0, formation=1.0)
        assert reward_score(formation_metrics(trace), weights) == pytest.approx(0.5)

    def test_trajectory_error(self, trace):
        """Mean distance between observed and planned positions."""
        planned = [[(0.0, 0.0, 0.0), (0.0, 5.0, 0.0)], [(0.0, 0.0, 0.0), (0.0, 5.0, 0.0)]]
        assert formation_metrics(trace, planned).trajectory_error == pytest.approx(0.5)

    def test_measurement_noise(self):
        """Observed positions scatter with RMS close to noise_sigma."""
        state = swarm((0.0, 0.0, 0.0), noise_sigma=0.5)
        trace = simulate(state, [], duration=400.0, dt=1.0, rng=np.random.default_rng(12))
        errors = [np.linalg.norm(np.subtract(s.uavs[0].observed, s.uavs[0].position)) for s in trace[1:]]
        assert 0.3 <= float(np.sqrt(np.mean(np.square(errors)))) <= 0.7

    def test_invalid_traces(self, trace):
        """Empty traces and mis-shaped plans are shape errors."""
        with pytest.raises(ShapeError):
            formation_metrics([])
        with pytest.raises(ShapeError):
            formation_metrics(trace, [[(0.0, 0.0, 0.0)]])


class TestSimulate:
    """Scheduled commands over a trace."""

    def test_length_and_schedule(self):
        """duration / dt steps after the initial state; commands start on schedule."""
        cmd = CommandAst(verb=Verb.MOVE_TO, position=(10.0, 0.0, 0.0), speed=2.0,
                         modifiers=frozenset({Modifier.AVOID_OBSTACLE}))
        trace = simulate(swarm((0.0, 0.0, 0.0)), [(1.0, cmd)], duration=3.0, dt=0.5)
        assert len(trace) == 7
        xs = [s.uavs[0].position[0] for s in trace]
        assert xs[:3] == [0.0, 0.0, 0.0]
        assert xs[-1] == pytest.approx(4.0)

    @pytest.mark.parametrize("speed", [0.5, 3.0, 40.0])
    def test_displacement_bounded_by_speed(self, speed):
        """No UAV moves farther than min(speed, v_max) * dt in one step."""
        cmd = CommandAst(verb=Verb.MOVE_TO, position=(30.0, -20.0, -10.0), speed=speed)
        state = swarm((0.0, 0.0, 0.0), (5.0, 5.0, -5.0))
        trace = simulate(state, [(0.0, cmd)], duration=4.0, dt=0.25)
        bound = min(speed, state.v_max) * 0.25 + 1e-9
        for before, after in zip(trace, trace[1:]):
            for a, b in zip(before.uavs, after.uavs):
                assert np.linalg.norm(np.subtract(b.position, a.position)) <= bound

    def test_reward_falls_with_formation_error(self):
        """Wider deviations from the spacing never score better."""
        scores = [reward_score([swarm((0.0, 0.0, 0.0), (0.0, 5.0 + d, 0.0))]) for d in (0.0, 1.0, 3.0, 10.0)]
        assert scores == sorted(scores, reverse=True)
        assert scores[0] == pytest.approx(1.0)

    def test_invalid_timing(self):
        """Negative durations are rejected."""
        with pytest.raises(ValidationError):
            simulate(swarm((0, 0, 0)), [], duration=-1.0, dt=1.0)
