"""Car-following model and path tracking controller."""

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialflow.dynamics import VehicleParams
from socialflow.geometry import PathArrays
from socialflow.idm import (
    LEADER_SEARCH_RADIUS,
    IdmParams,
    idm_acceleration,
    find_leader,
    pure_pursuit_steer,
)


class TestIdmAcceleration:
    def test_equilibrium_following(self):
        # Both at the desired speed, 20 m gap: phi = 2 + 6 = 8,
        # accel = 5 * (1 - 1 - (8/20)^2) = -0.8.
        assert idm_acceleration(6.0, 6.0, 20.0) == pytest.approx(-0.8, rel=1e-12)

    def test_closing_on_stopped_leader(self):
        # phi = 2 + 6 + 6*6/(2*sqrt(25)) = 11.6,
        # accel = 5 * (1 - 1 - (11.6/16)^2) = -2.628125.
        assert idm_acceleration(6.0, 0.0, 16.0) == pytest.approx(-2.628125, rel=1e-12)

    def test_degenerate_gap_brakes_hard(self):
        assert idm_acceleration(6.0, 0.0, 0.0) == -10.0
        assert idm_acceleration(6.0, 0.0, -3.0) == -10.0

    def test_brake_clamp(self):
        assert idm_acceleration(10.0, 0.0, 1.0) == -10.0

    def test_free_road_limit(self):
        # Standing start, huge gap: accel approaches a from below.
        out = idm_acceleration(0.0, 0.0, 1e9)
        assert 0.0 < out <= 5.0
        assert out == pytest.approx(5.0, abs=1e-8)

    def test_at_desired_speed_free_road(self):
        out = idm_acceleration(6.0, 6.0, 1e9)
        assert out == pytest.approx(0.0, abs=1e-8)

    @given(
        st.floats(0, 10), st.floats(0, 10),
        st.floats(min_value=1e-3, max_value=1e4),
    )
    @settings(max_examples=300)
    def test_always_clamped(self, vb, vf, gap):
        out = idm_acceleration(vb, vf, gap)
        assert -10.0 <= out <= 5.0

    def test_custom_params(self):
        p = IdmParams(v0=10.0, T=2.0, s0=1.0, delta=2.0, a=2.0, b=2.0)
        # phi = 1 + 4*2 + 4*2/(2*sqrt(4)) = 11,
        # accel = 2 * (1 - (4/10)^2 - (11/20)^2) = 1.075.
        assert idm_acceleration(4.0, 2.0, 20.0, p) == pytest.approx(1.075, rel=1e-12)


@dataclass
class _StubPath:
    arrays: PathArrays
    lane_width: float = 4.0


@dataclass
class _StubAgent:
    agent_id: int
    x: float
    y: float
    speed: float
    path: _StubPath
    params: VehicleParams = field(default_factory=VehicleParams)


@dataclass
class _StubWorld:
    agents: Dict[int, _StubAgent]

    def alive_agents(self):
        return list(self.agents.values())


def _world_on_line(positions):
    path = _StubPath(PathArrays(np.array([[0.0, 0.0], [200.0, 0.0]])))
    agents = {
        i + 1: _StubAgent(i + 1, x, y, v, path)
        for i, (x, y, v) in enumerate(positions)
    }
    return _StubWorld(agents)


class TestFindLeader:
    def test_nearest_ahead_wins(self):
        world = _world_on_line([(10.0, 0.0, 5.0), (30.0, 0.0, 4.0), (25.0, 0.0, 3.0)])
        info = find_leader(world, 1)
        assert info.agent_id == 3
        # Bumper gap subtracts half of both 4.5 m bodies.
        assert info.gap == pytest.approx(15.0 - 4.5)
        assert info.speed == 3.0

    def test_behind_is_ignored(self):
        world = _world_on_line([(50.0, 0.0, 5.0), (30.0, 0.0, 4.0)])
        assert find_leader(world, 1) is None

    def test_search_radius(self):
        world = _world_on_line([(10.0, 0.0, 5.0), (10.0 + LEADER_SEARCH_RADIUS + 1.0, 0.0, 4.0)])
        assert find_leader(world, 1) is None
        world = _world_on_line([(10.0, 0.0, 5.0), (10.0 + LEADER_SEARCH_RADIUS, 0.0, 4.0)])
        assert find_leader(world, 1).agent_id == 2

    def test_lateral_gate_half_lane(self):
        world = _world_on_line([(10.0, 0.0, 5.0), (30.0, 2.5, 4.0)])
        assert find_leader(world, 1) is None
        world = _world_on_line([(10.0, 0.0, 5.0), (30.0, 2.0, 4.0)])
        assert find_leader(world, 1).agent_id == 2

    def test_cross_path_leader(self):
        # Follower tracks its own path; the other agent sits on a different
        # path but inside the follower's corridor, so it still counts.
        follower_path = _StubPath(PathArrays(np.array([[0.0, 0.0], [200.0, 0.0]])))
        other_path = _StubPath(PathArrays(np.array([[50.0, -30.0], [50.0, 30.0]])))
        agents = {
            1: _StubAgent(1, 20.0, 0.0, 5.0, follower_path),
            2: _StubAgent(2, 50.0, -1.0, 2.0, other_path),
        }
        info = find_leader(_StubWorld(agents), 1)
        assert info.agent_id == 2
        assert info.gap == pytest.approx(30.0 - 4.5)


class TestPurePursuit:
    def test_on_path_straight(self):
        arrays = PathArrays(np.array([[0.0, 0.0], [100.0, 0.0]]))
        sigma = pure_pursuit_steer(10.0, 0.0, 0.0, arrays, 10.0, 2.8, 0.6)
        assert sigma == pytest.approx(0.0, abs=1e-12)

    def test_offset_steers_back(self):
        arrays = PathArrays(np.array([[0.0, 0.0], [100.0, 0.0]]))
        # One meter left of the path: steer right (negative).
        sigma = pure_pursuit_steer(10.0, 1.0, 0.0, arrays, 10.0, 2.8, 0.6)
        dist = math.hypot(5.0, -1.0)
        alpha = math.atan2(-1.0, 5.0)
        expect = math.atan2(2.0 * 2.8 * math.sin(alpha), dist)
        assert sigma == pytest.approx(expect, rel=1e-12)
        assert sigma < 0.0

    def test_clamped_to_sigma_max(self):
        arrays = PathArrays(np.array([[0.0, 0.0], [100.0, 0.0]]))
        sigma = pure_pursuit_steer(10.0, 8.0, math.pi, arrays, 10.0, 2.8, 0.6)
        assert abs(sigma) <= 0.6

    def test_curve_steers_toward_arc(self):
        # Quarter circle of radius 10 turning left; vehicle sits at the
        # start, aligned with the tangent, so it must steer left.
        ang = np.linspace(-math.pi / 2, 0.0, 40)
        pts = np.stack([10.0 * np.cos(ang), 10.0 + 10.0 * np.sin(ang)], axis=1)
        arrays = PathArrays(pts)
        sigma = pure_pursuit_steer(0.0, 0.0, 0.0, arrays, 0.0, 2.8, 0.6)
        assert 0.05 < sigma <= 0.6
