import math

import numpy as np
import pytest

from safedrive.action import Action
from safedrive.controllers import GreedyConfig, make_policy
from safedrive.kernel import LaneChange, VehicleParams, required_safe_gap, safe_speed
from safedrive.sim import (
    BrakingZone, ConfigError, CrashedError, ObservationConfig, ScenarioConfig, VehicleSpec, World,
    build_context, build_observation, dumps, loads, make_scenario, observation_size, ring_road, run_episode,
    step_world, straight_road, uncontrolled_driver, KINDS,
)

P = VehicleParams()


def spec(vid, pos, speed=0.0, limit=20.0, lane=0, section="road", controlled=False, route=None, params=P):
    return VehicleSpec(vid, section, lane, pos, speed, limit, params, controlled, route)


def config(net, vehicles, ego=0, horizon=100, integration="ballistic", zones=()):
    return ScenarioConfig(net, tuple(vehicles), horizon, 0.1, ego, integration=integration, zones=tuple(zones))


def road(length=1000.0, lanes=1):
    return straight_road(length, lanes)


class TestContext:
    def test_alone_on_ring(self):
        w = World(config(ring_road(), [spec(0, 10, section="s0", lane=1, controlled=True)]))
        ctx = build_context(w, 0)
        for name in ("gap", "back_gap", "left_gap", "left_back_gap", "right_gap", "right_back_gap"):
            assert getattr(ctx, name) == math.inf

    def test_rightmost_lane_sentinel(self):
        w = World(config(ring_road(), [spec(0, 10, section="s0", lane=0, controlled=True)]))
        ctx = build_context(w, 0)
        assert ctx.right_gap == ctx.right_back_gap == -1
        assert ctx.left_gap == math.inf

    def test_bumper_to_bumper(self):
        w = World(config(road(), [spec(0, 100, controlled=True), spec(1, 130, speed=10)]))
        ctx = build_context(w, 0)
        assert ctx.gap == 25.0 and ctx.leader.speed == 10.0
        assert build_context(w, 1).back_gap == 25.0

    def test_scan_radius_hides_far_leader(self):
        w = World(config(road(), [spec(0, 100, controlled=True), spec(1, 300)]))
        assert build_context(w, 0, scan_radius=50).gap == math.inf

    def test_adjacent_overlap_reads_zero(self):
        w = World(config(road(lanes=2), [spec(0, 100, controlled=True), spec(1, 102, lane=1)]))
        ctx = build_context(w, 0)
        assert ctx.left_gap == 0.0


class TestObservation:
    def test_empty_road(self):
        net = road(lanes=2)
        w = World(config(net, [spec(0, 100, speed=5, controlled=True, route="through")]))
        cfg = ObservationConfig(50, 2, 1)
        obs = build_observation(w, 0, cfg)
        assert obs.shape == (observation_size(net, cfg),)
        assert list(obs[:6]) == [100.0, 5.0, 0.0, 0.0, 0.0, 0.0]
        assert list(obs[6:8]) == [1.0, 1.0]
        assert not obs[8:].any()

    def test_scan_radius_filters(self):
        w = World(config(road(), [spec(0, 100, controlled=True), spec(1, 110, speed=3), spec(2, 140, speed=4)]))
        obs = build_observation(w, 0, ObservationConfig(scan_radius=30, n_front=2, n_back=0))
        lanes = obs[7:]
        assert list(lanes[:4]) == [1.0, 10.0, 3.0, 0.0]
        assert not lanes[4:].any()

    def test_constant_length(self):
        cfg = make_scenario("loop_normal", seed=1)
        w = World(cfg)
        pol = make_policy("gipps_greedy")
        from safedrive.sim.runner import _policy_actions
        sizes = set()
        for _ in range(20):
            sizes.add(build_observation(w, cfg.ego).shape)
            step_world(w, _policy_actions(w, pol, None))
        assert sizes == {(observation_size(cfg.network),)}


class TestStep:
    def test_stationary_world(self):
        vs = [spec(0, 100, controlled=True), spec(1, 200, controlled=True)]
        w = World(config(road(), vs))
        before = w.vehicles()
        step_world(w, {0: Action(0.0), 1: Action(0.0)})
        assert w.vehicles() == before and w.time_step == 1

    @pytest.mark.parametrize("mode, dx", [("semi_implicit", 1.97), ("ballistic", 1.985), ("explicit", 2.0)])
    def test_kinematics(self, mode, dx):
        w = World(config(road(), [spec(0, 100, speed=20, limit=30, controlled=True)], integration=mode))
        step_world(w, {0: Action(-3.0)})
        st = w.vehicle(0)
        assert st.speed == pytest.approx(19.7, abs=1e-12)
        assert st.position - 100 == pytest.approx(dx, abs=1e-12)
        assert st.prev_accel == pytest.approx(-3.0, abs=1e-12)  # realized (v' - v) / dt

    def test_speed_never_negative(self):
        w = World(config(road(), [spec(0, 100, speed=0.1, controlled=True)]))
        step_world(w, {0: Action(-3.0)})
        assert w.vehicle(0).speed == 0.0

    def test_crash_detected_on_first_overlap(self):
        vs = [spec(0, 0, speed=20, limit=30, controlled=True), spec(1, 15, limit=0.0)]
        w = World(config(road(), vs))
        for k in range(1, 6):
            step_world(w, {0: Action(0.0)})
            assert w.crashed == (k == 5)
        with pytest.raises(CrashedError):
            step_world(w, {0: Action(0.0)})

    def test_action_map_must_match(self):
        w = World(config(road(), [spec(0, 100, controlled=True)]))
        with pytest.raises(ValueError):
            step_world(w, {})
        with pytest.raises(ValueError):
            step_world(w, {0: Action(-9.0)})
        with pytest.raises(ValueError):
            step_world(w, {0: Action(0.0, LaneChange.LEFT)})

    def test_lane_change_is_instant(self):
        w = World(config(road(lanes=2), [spec(0, 100, speed=10, controlled=True)]))
        step_world(w, {0: Action(0.0, LaneChange.LEFT)})
        assert w.vehicle(0).lane == 1


class TestUncontrolled:
    def test_free_road(self):
        w = World(config(road(), [spec(0, 900, controlled=True), spec(1, 100, speed=10, limit=17)]))
        assert uncontrolled_driver(w, 1).accel == 2.5
        w = World(config(road(), [spec(0, 900, controlled=True), spec(1, 100, speed=16.9, limit=17)]))
        assert uncontrolled_driver(w, 1).accel == pytest.approx(1.0)

    def test_braking_zone(self):
        zone = BrakingZone("road", (0,), 0.0, 1000.0, 0, 10_000, 3.0, 3.0)
        vs = [spec(0, 990, speed=0, limit=1, controlled=True), spec(1, 0, speed=10, limit=10)]
        w = World(config(road(2000), vs, zones=[zone]))
        accels, speeds = [], []
        for _ in range(40):
            accels.append(uncontrolled_driver(w, 1).accel)
            step_world(w, {0: Action(0.0)})
            speeds.append(w.vehicle(1).speed)
        n_full = sum(1 for a in accels if a == -3.0)
        assert accels[:n_full] == [-3.0] * n_full and n_full == 23
        assert min(speeds) >= 3.0 - 1e-9
        assert speeds[-1] == pytest.approx(3.0, abs=1e-9)
        assert all(abs(a) < 1e-9 for a in accels[n_full + 1:])

    def test_closing_on_stopped_leader(self):
        vs = [spec(0, 400, limit=0.0), spec(1, 200, speed=20, limit=25)]
        w = World(config(road(), vs, ego=1))
        gaps = []
        for _ in range(400):
            st, lead = w.vehicle(1), w.vehicle(0)
            g = lead.position - 5 - st.position
            unsafe = safe_speed(g, st.speed, 0.0, P, 3.0).unsafe
            a = uncontrolled_driver(w, 1).accel
            step_world(w, {})
            v_next = w.vehicle(1).speed
            if unsafe:
                # only in the last, sub-step stop; the vehicle brakes fully and halts mid-step
                assert a == -3.0 and st.speed < 3.0 * 0.1 and v_next == 0.0
            else:
                assert required_safe_gap(st.speed, v_next, 0.0, P, 3.0) <= g + 1e-9
            gaps.append(w.vehicle(0).position - 5 - w.vehicle(1).position)
        assert w.vehicle(1).speed == 0.0 and min(gaps) >= 2.0 - 1e-9


class TestScenarios:
    def test_loop_normal(self):
        cfg = make_scenario("loop_normal", seed=4)
        assert len(cfg.vehicles) == 26
        limits = sorted({v.limit for v in cfg.vehicles if not v.controlled})
        assert limits == [17.0] and cfg.vehicle(cfg.ego).limit == 34.0

    def test_bypass_spacing(self):
        cfg = make_scenario("freeway_bypass", {"headway": 20.0}, seed=0)
        fleet = sorted((v for v in cfg.vehicles if v.id != cfg.ego), key=lambda v: v.position)
        assert np.allclose(np.diff([v.position for v in fleet]), 20.0)
        assert all(a.lane != b.lane for a, b in zip(fleet, fleet[1:]))

    def test_platoon_setup(self):
        cfg = make_scenario("platoon")
        vs = sorted(cfg.vehicles, key=lambda v: -v.position)
        assert len(vs) == 4 and all(v.params.min_gap == 4.0 for v in vs)
        assert vs[0].speed == 25.0 and not vs[0].controlled

    @pytest.mark.parametrize("kind", KINDS)
    def test_toml_round_trip(self, kind):
        cfg = make_scenario(kind, seed=2)
        assert loads(dumps(cfg)) == cfg

    @pytest.mark.parametrize("kind", KINDS)
    def test_seeded(self, kind):
        assert make_scenario(kind, seed=9) == make_scenario(kind, seed=9)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_scenario("nope")


class TestConfigErrors:
    def test_dt_must_equal_reaction_time(self):
        with pytest.raises(ConfigError, match="reaction_time"):
            ScenarioConfig(road(), (spec(0, 10, controlled=True),), 10, 0.2, 0)

    def test_overlap(self):
        with pytest.raises(ConfigError, match="overlap"):
            config(road(), [spec(0, 10, controlled=True), spec(1, 12)])

    def test_defensive_order(self):
        hard = VehicleParams(max_decel=4.0)
        with pytest.raises(ConfigError, match="behind"):
            config(road(), [spec(0, 10, controlled=True, params=hard), spec(1, 50)])

    def test_missing_key_named(self):
        text = dumps(make_scenario("loop_normal")).replace("horizon = 5000\n", "")
        with pytest.raises(ConfigError, match="horizon"):
            loads(text)

    def test_bad_ego(self):
        with pytest.raises(ConfigError, match="ego"):
            config(road(), [spec(0, 10)], ego=3)


class TestEpisodes:
    def test_alone_reaches_limit(self):
        cfg = config(ring_road(), [spec(0, 10, section="s0", lane=1, limit=20, controlled=True, route="loop")],
                     horizon=3000)
        m = run_episode(cfg, "gipps_greedy", trace=True)
        assert not m.crash and m.steps == 3000
        assert m.trace.for_vehicle(0)["speed"][-1] == 20.0
        assert m.mean_speed > 19.0

    def test_platoon_matches_prediction(self):
        from safedrive.analysis import platoon_prediction
        cfg = make_scenario("platoon", {"decels": [5.0, 4.0, 3.0, 3.0], "horizon": 3000})
        m = run_episode(cfg, "gipps_greedy", trace=True)
        vs = sorted(cfg.vehicles, key=lambda v: -v.position)
        pred = platoon_prediction(25.0, [v.params for v in vs[1:]], [v.params.max_decel for v in vs[:-1]])
        cols = m.trace.columns
        last = cols["step"] == cols["step"].max()
        pos = {int(i): p for i, p in zip(cols["id"][last], cols["position"][last])}
        for (a, b), g in zip(zip(vs, vs[1:]), pred):
            assert pos[a.id] - 5 - pos[b.id] == pytest.approx(g, rel=0.01)

    @pytest.mark.parametrize("controller", ["gipps_greedy", "comfort_greedy"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_emergency_keeps_min_gap(self, controller, seed):
        m = run_episode(make_scenario("freeway_emergency", seed=seed), controller)
        assert not m.crash
        assert m.min_gap is None or m.min_gap >= 2.0 - 1e-3

    @pytest.mark.parametrize("controller", ["gipps_greedy", "comfort_greedy"])
    @pytest.mark.parametrize("kind", ["loop_emergency", "freeway_merge", "freeway_bypass"])
    def test_compiled_matches_python(self, controller, kind):
        cfg = make_scenario(kind, {"horizon": 300}, seed=5)
        fast = run_episode(cfg, controller)
        traced = run_episode(cfg, controller, trace=True)
        slow = run_episode(cfg, controller, compiled=False, trace=True)
        assert fast == traced == slow
        for k in ("position", "speed", "accel", "lane"):
            assert np.array_equal(traced.trace.columns[k], slow.trace.columns[k])

    def test_custom_policy_is_filtered(self):
        from safedrive.action import RawPolicyOutput
        cfg = make_scenario("loop_normal", {"horizon": 500}, seed=1)
        m = run_episode(cfg, lambda view: RawPolicyOutput(3.0, -3.0))
        assert not m.crash

    def test_on_step_and_trace_jerk(self):
        seen = []
        cfg = make_scenario("loop_normal", {"horizon": 50}, seed=0)
        m = run_episode(cfg, "comfort_greedy", trace=True, on_step=lambda w: seen.append(w.time_step))
        assert seen == list(range(1, 51))
        ego = m.trace.for_vehicle(cfg.ego)
        assert len(ego["step"]) == 50 and np.isnan(ego["jerk"]).sum() == 1

    def test_deterministic(self):
        cfg = make_scenario("loop_congested", {"horizon": 800}, seed=3)
        assert run_episode(cfg, "comfort_greedy") == run_episode(cfg, "comfort_greedy")

    def test_unknown_controller(self):
        with pytest.raises(ValueError):
            run_episode(make_scenario("platoon"), "nope")

    def test_greedy_config_threads_through(self):
        cfg = make_scenario("loop_normal", {"horizon": 300}, seed=0)
        a = run_episode(cfg, "comfort_greedy", greedy=GreedyConfig(comfort_weight=0.0))
        b = run_episode(cfg, "comfort_greedy", greedy=GreedyConfig(comfort_weight=0.0), compiled=False)
        assert a == b
