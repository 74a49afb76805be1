"""Episode engine: reset validation, stepping, termination, rewards."""

import math

import pytest

from strip_fixture import agent, make_case, strip_scenario
from socialflow.dynamics import Action
from socialflow.env import (
    AlreadyDone,
    CaseMismatch,
    EnvMode,
    EpisodeConfig,
    MissingAction,
    TerminationStatus,
    classify_termination,
    reset,
    step,
)
from socialflow.seeding import splitmix64


@pytest.fixture(scope="module")
def strip():
    return strip_scenario()


def drive(world, actions_by_id, max_ticks=600):
    """Step with constant per-agent actions until the episode ends."""
    last = None
    for _ in range(max_ticks):
        if world.episode_done:
            break
        acts = {aid: actions_by_id[aid] for aid in
                (a.agent_id for a in world.alive_agents())}
        _, last = step(world, acts)
    assert world.episode_done
    return last


class TestReset:
    def test_initial_state_matches_case(self, strip):
        case = make_case([agent(3, 10.0, speed=4.0, svo=20.0),
                          agent(1, 2.0, speed=0.0, svo=80.0)])
        world = reset(strip, case)
        assert world.roster_ids == (1, 3)
        assert [a.agent_id for a in world.alive_agents()] == [1, 3]
        assert world.rng_state == case.seed
        assert world.step_count == 0
        a3 = world.agents[3]
        assert (a3.x, a3.y, a3.theta, a3.speed) == (10.0, 0.0, 0.0, 4.0)
        assert a3.genuine_svo == 20.0
        assert not a3.is_ego

    def test_history_prefilled_with_initial_state(self, strip):
        cfg = EpisodeConfig(history_len=4)
        world = reset(strip, make_case([agent(1, 10.0, speed=3.0)]), config=cfg)
        hist = list(world.agents[1].history)
        assert len(hist) == 4
        assert all(h == (10.0, 0.0, 0.0, 3.0) for h in hist)

    def test_repeated_resets_identical(self, strip):
        case = make_case([agent(1, 2.0, speed=1.0), agent(2, 18.0, speed=2.0)])
        w1, w2 = reset(strip, case), reset(strip, case)
        for aid in (1, 2):
            a, b = w1.agents[aid], w2.agents[aid]
            assert (a.x, a.y, a.theta, a.speed) == (b.x, b.y, b.theta, b.speed)
            assert a.proj_s == b.proj_s and a.proj_lat == b.proj_lat

    def test_ego_flag_only_in_ego_mode(self, strip):
        case = make_case([agent(1, 2.0), agent(2, 18.0)])
        assert not reset(strip, case).agents[1].is_ego
        world = reset(strip, case, mode=EnvMode.EGO_VS_FLOW)
        assert world.agents[1].is_ego
        assert not world.agents[2].is_ego

    def test_ego_mode_requires_agent_one(self, strip):
        case = make_case([agent(2, 2.0), agent(3, 18.0)])
        with pytest.raises(CaseMismatch, match="ego"):
            reset(strip, case, mode=EnvMode.EGO_VS_FLOW)

    def test_scenario_name_mismatch(self, strip):
        case = make_case([agent(1, 2.0)], name="elsewhere")
        with pytest.raises(CaseMismatch, match="elsewhere"):
            reset(strip, case)

    def test_duplicate_agent_id(self, strip):
        case = make_case([agent(1, 2.0), agent(1, 18.0)])
        with pytest.raises(CaseMismatch, match="duplicate"):
            reset(strip, case)

    def test_unknown_path(self, strip):
        with pytest.raises(CaseMismatch, match="path"):
            reset(strip, make_case([agent(1, 2.0, path=5)]))

    def test_svo_out_of_range(self, strip):
        with pytest.raises(CaseMismatch, match="svo"):
            reset(strip, make_case([agent(1, 2.0, svo=95.0)]))

    def test_speed_out_of_range(self, strip):
        with pytest.raises(CaseMismatch, match="speed"):
            reset(strip, make_case([agent(1, 2.0, speed=11.0)]))
        with pytest.raises(CaseMismatch, match="speed"):
            reset(strip, make_case([agent(1, 2.0, speed=-0.1)]))

    def test_overlapping_spawn_rejected(self, strip):
        case = make_case([agent(1, 20.0), agent(2, 23.0)])
        with pytest.raises(CaseMismatch, match="overlap"):
            reset(strip, case)

    def test_empty_case_rejected(self, strip):
        with pytest.raises(CaseMismatch, match="no agents"):
            reset(strip, make_case([]))


class TestStepMechanics:
    def test_missing_action_named(self, strip):
        world = reset(strip, make_case([agent(1, 2.0), agent(2, 18.0)]))
        with pytest.raises(MissingAction):
            step(world, {1: Action(5.0, 0.0)})

    def test_tuple_actions_equal_dataclass_actions(self, strip):
        case = make_case([agent(1, 10.0, speed=5.0)])
        wa = reset(strip, case)
        wb = reset(strip, case)
        for _ in range(5):
            step(wa, {1: Action(7.0, 0.1)})
            step(wb, {1: (7.0, 0.1)})
        a, b = wa.agents[1], wb.agents[1]
        assert (a.x, a.y, a.theta, a.speed) == (b.x, b.y, b.theta, b.speed)

    def test_v_ref_clamped_to_speed_range(self, strip):
        case = make_case([agent(1, 10.0, speed=5.0)])
        over = reset(strip, case)
        capped = reset(strip, case)
        step(over, {1: Action(50.0, 0.0)})
        step(capped, {1: Action(10.0, 0.0)})
        assert over.agents[1].speed == capped.agents[1].speed
        under = reset(strip, case)
        floor = reset(strip, case)
        step(under, {1: Action(-3.0, 0.0)})
        step(floor, {1: Action(0.0, 0.0)})
        assert under.agents[1].speed == floor.agents[1].speed

    def test_extra_action_entries_ignored(self, strip):
        world = reset(strip, make_case([agent(1, 10.0, speed=5.0)]))
        _, out = step(world, {1: Action(5.0, 0.0), 99: "nonsense"})
        assert set(out.per_agent) == {1}

    def test_step_after_done_rejected(self, strip):
        cfg = EpisodeConfig(max_steps=1)
        world = reset(strip, make_case([agent(1, 10.0)]), config=cfg)
        _, out = step(world, {1: Action(0.0, 0.0)})
        assert out.episode_done
        with pytest.raises(AlreadyDone):
            step(world, {1: Action(0.0, 0.0)})

    def test_rng_state_advances_by_splitmix(self, strip):
        case = make_case([agent(1, 10.0)], seed=123456)
        world = reset(strip, case)
        expected = case.seed
        for _ in range(5):
            step(world, {1: Action(0.0, 0.0)})
            expected = splitmix64(expected)
            assert world.rng_state == expected

    def test_trajectory_bit_determinism(self, strip):
        case = make_case([agent(1, 2.0, speed=2.0), agent(2, 18.0, speed=6.0)])
        seq = [(4.0 + 0.1 * k, 0.02 * ((-1) ** k)) for k in range(30)]
        states = []
        for _ in range(2):
            world = reset(strip, case)
            for v_ref, sigma in seq:
                if world.episode_done:
                    break
                acts = {a.agent_id: Action(v_ref, sigma)
                        for a in world.alive_agents()}
                step(world, acts)
            states.append([(a.x, a.y, a.theta, a.speed)
                           for a in (world.agents[1], world.agents[2])])
        assert states[0] == states[1]

    def test_dead_agents_leave_the_world(self, strip):
        cfg = EpisodeConfig(max_steps=8)
        world = reset(strip, make_case([agent(1, 35.0, speed=10.0),
                                        agent(2, 2.0, speed=0.0)]), config=cfg)
        statuses = {}
        while not world.episode_done:
            acts = {a.agent_id: Action(10.0 if a.agent_id == 1 else 0.0, 0.0)
                    for a in world.alive_agents()}
            _, out = step(world, acts)
            statuses.update({a: r.new_status for a, r in out.per_agent.items()
                             if r.new_status is not TerminationStatus.ALIVE})
        assert statuses[1] is TerminationStatus.SUCCESS
        assert statuses[2] is TerminationStatus.TIMEOUT
        assert world.agents[1].terminal_step < world.agents[2].terminal_step
        # After agent 1 left, later outcomes no longer mention it.
        assert world.alive_agents() == []


class TestTermination:
    def test_success_past_zone_exit(self, strip):
        world = reset(strip, make_case([agent(1, 35.0, speed=10.0)]))
        drive(world, {1: Action(10.0, 0.0)}, max_ticks=20)
        rec = world.agents[1]
        assert rec.status is TerminationStatus.SUCCESS
        assert rec.proj_s > strip.paths[0].exit_arclength

    def test_timeout_at_horizon(self, strip):
        cfg = EpisodeConfig(max_steps=4)
        world = reset(strip, make_case([agent(1, 10.0)]), config=cfg)
        out = drive(world, {1: Action(0.0, 0.0)})
        assert world.agents[1].status is TerminationStatus.TIMEOUT
        assert out.step == 4

    def test_rear_end_collision_hits_both(self, strip):
        world = reset(strip, make_case([agent(1, 20.0, speed=10.0),
                                        agent(2, 27.0, speed=0.0)]))
        drive(world, {1: Action(10.0, 0.0), 2: Action(0.0, 0.0)}, max_ticks=20)
        assert world.agents[1].status is TerminationStatus.COLLISION
        assert world.agents[2].status is TerminationStatus.COLLISION
        assert world.agents[1].terminal_step == world.agents[2].terminal_step

    def test_off_road_beats_off_route(self, strip):
        # Crossing the band edge while already past the route threshold.
        world = reset(strip, make_case(
            [agent(1, 30.0, y=6.5, theta=math.pi / 2, speed=5.0)]))
        drive(world, {1: Action(5.0, 0.0)}, max_ticks=5)
        assert world.agents[1].status is TerminationStatus.OFF_ROAD

    def test_collision_beats_off_road(self, strip):
        # Both conditions arise on the same step for both agents.
        world = reset(strip, make_case(
            [agent(1, 30.0, y=6.0, theta=math.pi / 2, speed=10.0),
             agent(2, 30.0, y=10.6, theta=math.pi / 2, speed=0.0)]))
        _, out = step(world, {1: Action(10.0, 0.0), 2: Action(0.0, 0.0)})
        assert out.per_agent[1].new_status is TerminationStatus.COLLISION
        assert out.per_agent[2].new_status is TerminationStatus.COLLISION

    def test_off_route_threshold_is_strict(self, strip):
        world = reset(strip, make_case(
            [agent(1, 30.0, y=3.0, theta=math.pi / 2, speed=5.0)]))
        drive(world, {1: Action(5.0, 0.0)}, max_ticks=10)
        rec = world.agents[1]
        # Alive at |lat| = 4.0 exactly, terminated on the next half meter.
        assert rec.status is TerminationStatus.OFF_ROUTE
        assert rec.terminal_step == 3
        assert rec.y == pytest.approx(4.5)

    def test_wrong_lane_needs_persistence(self, strip):
        world = reset(strip, make_case(
            [agent(1, 30.0, theta=math.pi, speed=5.0)]))
        drive(world, {1: Action(5.0, 0.0)}, max_ticks=20)
        rec = world.agents[1]
        assert rec.status is TerminationStatus.WRONG_LANE
        assert rec.terminal_step == 10  # default persistence

    def test_wrong_lane_counter_resets_when_aligned(self, strip):
        world = reset(strip, make_case(
            [agent(1, 30.0, theta=math.pi, speed=5.0)]))
        for _ in range(5):
            step(world, {1: Action(5.0, 0.0)})
        assert world.agents[1].wrong_lane_steps == 5
        # Swing the heading back in line: counter must clear.
        world.agents[1].theta = 0.0
        step(world, {1: Action(5.0, 0.0)})
        assert world.agents[1].wrong_lane_steps == 0
        assert world.agents[1].status is TerminationStatus.ALIVE

    def test_classify_rejects_dead_agent(self, strip):
        cfg = EpisodeConfig(max_steps=1)
        world = reset(strip, make_case([agent(1, 10.0)]), config=cfg)
        step(world, {1: Action(0.0, 0.0)})
        with pytest.raises(ValueError, match="already"):
            classify_termination(world.agents[1], world)


class TestRewards:
    def test_speed_term_tracks_post_move_speed(self, strip):
        world = reset(strip, make_case([agent(1, 10.0, speed=5.0)]))
        _, out = step(world, {1: Action(5.0, 0.0)})
        bd = out.per_agent[1].breakdown
        assert bd.r_speed == 2.0 * world.agents[1].speed / 10.0 - 1.0
        assert bd.r_speed == 0.0
        assert bd.r_fail == 0.0
        assert bd.individual == 0.0
        assert bd.composed == bd.individual  # single agent
        assert bd.adversary_signal is None  # flow mode

    def test_full_speed_and_standing_endpoints(self, strip):
        world = reset(strip, make_case([agent(1, 2.0, speed=10.0)]))
        _, out = step(world, {1: Action(10.0, 0.0)})
        assert out.per_agent[1].breakdown.r_speed == 1.0
        world = reset(strip, make_case([agent(1, 2.0, speed=0.0)]))
        _, out = step(world, {1: Action(0.0, 0.0)})
        assert out.per_agent[1].breakdown.r_speed == -1.0
        assert out.per_agent[1].breakdown.individual == -1.0

    def test_failure_penalty_lands_once(self, strip):
        world = reset(strip, make_case(
            [agent(1, 30.0, y=3.0, theta=math.pi / 2, speed=5.0)]))
        rewards = []
        while not world.episode_done:
            _, out = step(world, {1: Action(5.0, 0.0)})
            rewards.append(out.per_agent[1].breakdown)
        assert [bd.r_fail for bd in rewards] == [0.0, 0.0, -1.0]
        last = rewards[-1]
        assert last.individual == 1.0 * last.r_speed + 100.0 * last.r_fail

    def test_social_composition_between_two_agents(self, strip):
        world = reset(strip, make_case([agent(1, 10.0, speed=4.0, svo=30.0),
                                        agent(2, 40.0, speed=8.0, svo=60.0)]))
        _, out = step(world, {1: Action(4.0, 0.0), 2: Action(8.0, 0.0)})
        b1 = out.per_agent[1].breakdown
        b2 = out.per_agent[2].breakdown
        c30, s30 = math.cos(math.radians(30)), math.sin(math.radians(30))
        c60, s60 = math.cos(math.radians(60)), math.sin(math.radians(60))
        assert b1.composed == c30 * b1.individual + s30 * b2.individual
        assert b2.composed == c60 * b2.individual + s60 * b1.individual

    def test_axis_angles_compose_exactly(self, strip):
        world = reset(strip, make_case([agent(1, 10.0, speed=4.0, svo=0.0),
                                        agent(2, 40.0, speed=8.0, svo=90.0)]))
        _, out = step(world, {1: Action(4.0, 0.0), 2: Action(8.0, 0.0)})
        b1 = out.per_agent[1].breakdown
        b2 = out.per_agent[2].breakdown
        assert b1.composed == b1.individual  # egoistic endpoint
        assert b2.composed == b1.individual  # prosocial endpoint, one other

    def test_terminated_agents_contribute_zero(self, strip):
        # Agent 2 leaves the road on step 1; afterwards the prosocial
        # agent 1 composes against a zero contribution.
        world = reset(strip, make_case(
            [agent(1, 5.0, speed=5.0, svo=90.0),
             agent(2, 30.0, y=6.5, theta=math.pi / 2, speed=5.0)]))
        _, out = step(world, {1: Action(5.0, 0.0), 2: Action(5.0, 0.0)})
        assert out.per_agent[2].new_status is TerminationStatus.OFF_ROAD
        _, out = step(world, {1: Action(5.0, 0.0)})
        assert out.per_agent[1].breakdown.composed == 0.0

    def test_adversary_signal_negates_ego_reward(self, strip):
        world = reset(strip, make_case([agent(1, 10.0, speed=4.0),
                                        agent(2, 40.0, speed=8.0)]),
                      mode=EnvMode.EGO_VS_FLOW)
        _, out = step(world, {1: Action(4.0, 0.0), 2: Action(8.0, 0.0)})
        ego_ind = out.per_agent[1].breakdown.individual
        for res in out.per_agent.values():
            assert res.breakdown.adversary_signal == -ego_ind

    def test_failmaker_composes_against_ego(self, strip):
        world = reset(strip, make_case([agent(1, 10.0, speed=4.0),
                                        agent(2, 40.0, speed=8.0, svo=-45.0)]),
                      mode=EnvMode.EGO_VS_FLOW)
        _, out = step(world, {1: Action(4.0, 0.0), 2: Action(8.0, 0.0)})
        b1 = out.per_agent[1].breakdown
        b2 = out.per_agent[2].breakdown
        c, s = math.cos(math.radians(-45)), math.sin(math.radians(-45))
        assert b2.composed == c * b2.individual + s * b1.individual

    def test_failmaker_collision_refund(self, strip):
        # The failmaker blocks the lane; the ego rams it.  On the
        # terminal step its own reward gets the failure weight back.
        world = reset(strip, make_case([agent(1, 20.0, speed=10.0),
                                        agent(2, 27.0, speed=0.0, svo=-45.0)]),
                      mode=EnvMode.EGO_VS_FLOW)
        last = drive(world, {1: Action(10.0, 0.0), 2: Action(0.0, 0.0)},
                     max_ticks=20)
        b1 = last.per_agent[1].breakdown
        b2 = last.per_agent[2].breakdown
        assert last.per_agent[2].new_status is TerminationStatus.COLLISION
        raw = 1.0 * b2.r_speed + 100.0 * b2.r_fail
        assert b2.individual == raw + 100.0
        c, s = math.cos(math.radians(-45)), math.sin(math.radians(-45))
        assert b2.composed == c * b2.individual + s * b1.individual
        assert b2.adversary_signal == -b1.individual
        assert b1.individual < -90.0  # the ego ate the crash penalty


class TestObservationsFromStep:
    def test_alive_agents_get_lazy_observation(self, strip):
        world = reset(strip, make_case([agent(1, 10.0, speed=5.0)]))
        _, out = step(world, {1: Action(5.0, 0.0)})
        handle = out.per_agent[1].observation
        obs = handle()
        assert obs.agent_ids == [1]
        assert obs.self_index == 0

    def test_terminated_agents_get_none(self, strip):
        cfg = EpisodeConfig(max_steps=1)
        world = reset(strip, make_case([agent(1, 10.0)]), config=cfg)
        _, out = step(world, {1: Action(0.0, 0.0)})
        assert out.per_agent[1].observation is None
