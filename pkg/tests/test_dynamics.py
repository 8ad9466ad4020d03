"""Car-following and lane-change model checks against independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from headwayctl.dynamics import (GapState, IdmParams, LaneChangeParams,
                                 LaneContext, LaneOption, brake_feasible,
                                 braking_travel, idm_acceleration,
                                 lane_change_decision, safe_velocity)

P = IdmParams()
DT = 0.5


class TestIdmAcceleration:
    def test_free_road_at_rest_gives_max_accel(self):
        assert idm_acceleration(0.0, math.inf, 0.0, P) == P.max_accel

    def test_free_road_at_desired_speed_gives_zero(self):
        assert idm_acceleration(P.desired_speed, math.inf, 0.0, P) == 0.0

    def test_hand_computed_value(self):
        # v=30 behind a leader at 25 with a 30 m gap:
        # s* = 2 + 45 + 150/(2 sqrt(1.5)), a = 1 - (30/31.29)^4 - (s*/30)^2
        a = idm_acceleration(30.0, 30.0, 25.0, P)
        assert a == pytest.approx(-12.862012780807262, abs=1e-12)

    def test_headway_override_changes_result(self):
        tight = idm_acceleration(20.0, 40.0, 20.0, P, time_headway=1.5)
        wide = idm_acceleration(20.0, 40.0, 20.0, P, time_headway=3.0)
        assert wide < tight

    @pytest.mark.parametrize("v,gap", [(20.0, 35.059487042681),
                                       (25.0, 51.31642760141781)])
    def test_equilibrium_gap(self, v, gap):
        # closed form s_e = (s0 + vT) / sqrt(1 - (v/v0)^delta) must be a root
        assert idm_acceleration(v, gap, v, P) == pytest.approx(0.0, abs=1e-12)

    def test_equilibrium_matches_numeric_root(self):
        v = 20.0
        root = brentq(lambda s: idm_acceleration(v, s, v, P), 5.0, 500.0,
                      xtol=1e-12)
        assert root == pytest.approx(35.059487042681, abs=1e-8)

    def test_desired_gap_floor(self):
        # a fast receding leader cannot shrink s* below min_gap: at gap =
        # min_gap and v = 0 the interaction exactly cancels the free term
        assert idm_acceleration(0.0, P.min_gap, 50.0, P) == 0.0

    def test_monotone_in_gap(self):
        gaps = np.linspace(5.0, 200.0, 80)
        acc = [idm_acceleration(25.0, g, 22.0, P) for g in gaps]
        assert all(b > a for a, b in zip(acc, acc[1:]))

    def test_monotone_in_leader_speed(self):
        speeds = np.linspace(0.0, 30.0, 60)
        acc = [idm_acceleration(25.0, 40.0, lv, P) for lv in speeds]
        assert all(b >= a for a, b in zip(acc, acc[1:]))

    def test_monotone_in_own_speed_free_road(self):
        speeds = np.linspace(0.0, 35.0, 70)
        acc = [idm_acceleration(v, math.inf, 0.0, P) for v in speeds]
        assert all(b < a for a, b in zip(acc, acc[1:]))

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            idm_acceleration(math.nan, 10.0, 0.0, P)
        with pytest.raises(ValueError):
            idm_acceleration(10.0, 0.0, 0.0, P)
        with pytest.raises(ValueError):
            idm_acceleration(10.0, -3.0, 0.0, P)


class TestBrakingTravel:
    def test_hand_value(self):
        # 20 m/s at 4.5 m/s^2 with dt=0.5: 8 moving steps, 39.5 m
        assert braking_travel(20.0, 4.5, 0.5) == pytest.approx(39.5)

    def test_matches_discrete_simulation(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            u = float(rng.uniform(0.0, 40.0))
            dec = float(rng.uniform(0.5, 6.0))
            v, s = u, 0.0
            while v > 0.0:
                v = max(0.0, v - dec * DT)
                s += v * DT
            assert braking_travel(u, dec, DT) == pytest.approx(s, abs=1e-9)

    def test_zero_speed(self):
        assert braking_travel(0.0, 4.5, DT) == 0.0


class TestSafeVelocity:
    def test_infinite_gap(self):
        assert safe_velocity(10.0, math.inf, 0.0, DT, P) == math.inf

    def test_nonpositive_gap_forces_stop(self):
        assert safe_velocity(10.0, 0.0, 5.0, DT, P) == 0.0

    def test_bound_is_tight_and_safe(self):
        # at the bound the worst case ends with a whisker of gap left;
        # one epsilon above it would eat into the margin
        rng = np.random.default_rng(3)
        for _ in range(300):
            gap = float(rng.uniform(0.05, 120.0))
            lv = float(rng.uniform(0.0, 35.0))
            w = safe_velocity(0.0, gap, lv, DT, P)
            if w == 0.0:
                continue
            stop_f = w * DT + braking_travel(w, P.max_decel, DT)
            stop_l = braking_travel(lv, P.max_decel, DT)
            assert stop_f <= gap - 1e-3 + stop_l + 1e-9
            worse = (w + 1e-6) * DT + braking_travel(w + 1e-6, P.max_decel, DT)
            assert worse > gap - 1e-3 + stop_l - 1e-9

    def test_two_vehicle_duel_never_collides(self):
        # Leader drives erratically; follower plays IDM clamped to the safe
        # bound, exactly like the engine's update.  Start states must be
        # recoverable (the engine vets insertions and lane changes with the
        # same bound); from there the clamp keeps them recoverable forever.
        rng = np.random.default_rng(11)
        trials = 0
        while trials < 100:
            gap = float(rng.uniform(2.0, 60.0))
            v_f = float(rng.uniform(0.0, 32.0))
            v_l = float(rng.uniform(0.0, 32.0))
            if not brake_feasible(v_f, gap, v_l, DT, P):
                continue
            trials += 1
            x_l = gap + P.vehicle_length
            x_f = 0.0
            steps = 10_000 if trials <= 3 else 500
            for _ in range(steps):
                a_l = float(rng.uniform(-P.max_decel, P.max_accel))
                v_l = min(max(0.0, v_l + a_l * DT), P.desired_speed)
                x_l += v_l * DT
                g = x_l - P.vehicle_length - x_f
                a_f = idm_acceleration(v_f, g, v_l, P)
                v_new = max(0.0, v_f + a_f * DT)
                v_new = min(v_new, safe_velocity(v_f, g, v_l, DT, P))
                v_f = max(v_new, v_f - P.max_decel * DT)
                x_f += v_f * DT
                g = x_l - P.vehicle_length - x_f
                assert g > 0.0
                assert brake_feasible(v_f, g, v_l, DT, P)


class TestBrakeFeasible:
    def test_infinite_gap(self):
        assert brake_feasible(30.0, math.inf, 0.0, DT, P)

    def test_tiny_gap(self):
        assert not brake_feasible(10.0, 1e-4, 0.0, DT, P)

    def test_boundary(self):
        # exactly the follower's braking distance (plus margin) is feasible;
        # a hair less is not
        need = braking_travel(20.0, P.max_decel, DT) + 1e-3
        assert brake_feasible(20.0, need + 1e-9, 0.0, DT, P)
        assert not brake_feasible(20.0, need - 1e-6, 0.0, DT, P)


def _ctx(ego_speed, own_leader, options, mandatory=False, urgency=0.0,
         own_follower=None):
    return LaneContext(ego_speed=ego_speed, ego_headway=1.5,
                       own_leader=own_leader, own_follower=own_follower,
                       options=options, mandatory=mandatory, urgency=urgency)


class TestLaneChangeDecision:
    lc = LaneChangeParams()

    def test_clear_speed_advantage_triggers_change(self):
        # crawling behind a slow leader, target lane empty
        ctx = _ctx(20.0, GapState(gap=15.0, speed=12.0),
                   (LaneOption(lane=1, leader=None, follower=None),))
        assert lane_change_decision(ctx, P, self.lc) == 1

    def test_no_change_without_incentive(self):
        # same leader in both lanes: zero gain
        lead = GapState(gap=40.0, speed=25.0)
        ctx = _ctx(25.0, lead,
                   (LaneOption(lane=1, leader=lead, follower=None),))
        assert lane_change_decision(ctx, P, self.lc) is None

    def test_close_follower_blocks_change(self):
        ctx = _ctx(20.0, GapState(gap=15.0, speed=12.0),
                   (LaneOption(lane=1, leader=None,
                               follower=GapState(gap=0.5, speed=31.0)),))
        assert lane_change_decision(ctx, P, self.lc) is None

    def test_mandatory_ignores_incentive(self):
        # no speed gain at all, but mandatory with a safe slot still goes
        lead = GapState(gap=60.0, speed=25.0)
        ctx = _ctx(25.0, None, (LaneOption(lane=0, leader=lead,
                                           follower=GapState(gap=60.0,
                                                             speed=25.0)),),
                   mandatory=True)
        assert lane_change_decision(ctx, P, self.lc) == 0

    def test_urgency_relaxes_acceptance(self):
        # a gap too tight for comfort is taken once urgency saturates,
        # as long as plain braking feasibility holds
        fol = GapState(gap=6.0, speed=25.0)
        opts = (LaneOption(lane=0, leader=None, follower=fol),)
        calm = _ctx(25.0, None, opts, mandatory=True, urgency=0.0)
        hot = _ctx(25.0, None, opts, mandatory=True, urgency=1.0)
        assert lane_change_decision(calm, P, self.lc) is None
        assert lane_change_decision(hot, P, self.lc) == 0

    def test_infeasible_gap_refused_even_at_full_urgency(self):
        fol = GapState(gap=0.2, speed=31.0)
        ctx = _ctx(5.0, None,
                   (LaneOption(lane=0, leader=None, follower=fol),),
                   mandatory=True, urgency=1.0)
        assert lane_change_decision(ctx, P, self.lc) is None

    def test_deterministic(self):
        ctx = _ctx(20.0, GapState(gap=15.0, speed=12.0),
                   (LaneOption(lane=1, leader=GapState(gap=80.0, speed=30.0),
                               follower=GapState(gap=30.0, speed=20.0)),))
        first = lane_change_decision(ctx, P, self.lc)
        assert all(lane_change_decision(ctx, P, self.lc) == first
                   for _ in range(5))

    def test_prefers_larger_gain(self):
        slow = LaneOption(lane=1, leader=GapState(gap=20.0, speed=15.0),
                          follower=None)
        fast = LaneOption(lane=2, leader=None, follower=None)
        ctx = _ctx(20.0, GapState(gap=12.0, speed=10.0), (slow, fast))
        assert lane_change_decision(ctx, P, self.lc) == 2


speeds_st = st.floats(min_value=0.0, max_value=40.0)
gaps_st = st.floats(min_value=0.01, max_value=500.0)


class TestProperties:
    @given(v=speeds_st, gap=gaps_st, lv=speeds_st)
    @settings(max_examples=200, deadline=None)
    def test_idm_never_exceeds_max_accel(self, v, gap, lv):
        assert idm_acceleration(v, gap, lv, P) <= P.max_accel

    @given(gap=gaps_st, lv=speeds_st)
    @settings(max_examples=200, deadline=None)
    def test_safe_velocity_bound_holds_in_worst_case(self, gap, lv):
        w = safe_velocity(0.0, gap, lv, DT, P)
        assert w >= 0.0
        if w == 0.0 or math.isinf(w):
            return
        stop_f = w * DT + braking_travel(w, P.max_decel, DT)
        stop_l = braking_travel(lv, P.max_decel, DT)
        assert stop_f <= gap - 1e-3 + stop_l + 1e-9

    @given(v=speeds_st, gap=gaps_st, lv=speeds_st,
           headway=st.floats(min_value=1.5, max_value=6.0))
    @settings(max_examples=200, deadline=None)
    def test_longer_headway_never_accelerates_harder(self, v, gap, lv,
                                                     headway):
        tight = idm_acceleration(v, gap, lv, P, time_headway=1.5)
        wide = idm_acceleration(v, gap, lv, P, time_headway=headway)
        assert wide <= tight + 1e-12


class TestParamValidation:
    def test_idm_rejects_bad_values(self):
        with pytest.raises(ValueError):
            IdmParams(desired_speed=0.0).validate()
        with pytest.raises(ValueError):
            IdmParams(max_decel=1.0, comfortable_decel=2.0).validate()

    def test_lane_change_rejects_bad_values(self):
        with pytest.raises(ValueError):
            LaneChangeParams(cooperation=1.5).validate()
        with pytest.raises(ValueError):
            LaneChangeParams(assertiveness=0.0).validate()
