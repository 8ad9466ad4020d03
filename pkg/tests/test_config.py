"""Scenario construction, overrides, and YAML round-trips."""

import dataclasses

import pytest

from headwayctl.config import (ControlConfig, DemandConfig, ScenarioConfig,
                               desk_scenario, load_scenario,
                               multi_lane_scenario, save_scenario,
                               scenario_from_dict, single_lane_scenario)


class TestPresets:
    def test_single_lane_defaults(self):
        cfg = single_lane_scenario()
        cfg.validate()
        assert cfg.geometry.mainline_lanes == 1
        assert cfg.demand.merge_duration == 30.0

    def test_multi_lane(self):
        cfg = multi_lane_scenario()
        cfg.validate()
        assert cfg.geometry.mainline_lanes == 4
        assert cfg.demand.merge_duration == 50.0

    def test_desk_is_shorter(self):
        cfg = desk_scenario()
        cfg.validate()
        assert cfg.sim_duration < single_lane_scenario().sim_duration

    def test_overrides_reach_sections(self):
        cfg = single_lane_scenario(cav_fraction=0.5, merge_position=1200.0,
                                   sim_duration=300.0)
        assert cfg.demand.cav_fraction == 0.5
        assert cfg.geometry.merge_position == 1200.0
        assert cfg.sim_duration == 300.0

    def test_unknown_override_rejected(self):
        with pytest.raises((ValueError, TypeError)):
            single_lane_scenario(no_such_knob=1.0)


class TestSerialization:
    def test_yaml_round_trip(self, tmp_path):
        cfg = single_lane_scenario(cav_fraction=0.8, merge_position=1100.0)
        cfg.control.max_headway = 5.0
        path = tmp_path / "scenario.yaml"
        save_scenario(cfg, path)
        loaded = load_scenario(path)
        assert dataclasses.asdict(loaded) == dataclasses.asdict(cfg)
        assert loaded.fingerprint() == cfg.fingerprint()

    def test_partial_dict_uses_defaults(self):
        cfg = scenario_from_dict({"demand": {"cav_fraction": 0.3}})
        assert cfg.demand.cav_fraction == 0.3
        assert cfg.geometry.mainline_length == 2000.0

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown keys"):
            scenario_from_dict({"demand": {"flux_capacitor": 1.21}})


class TestDerivedQuantities:
    def test_jam_density(self):
        cfg = ScenarioConfig()
        # bumper-to-bumper spacing of 7 m -> ~142.9 veh/km/lane
        assert cfg.jam_density == pytest.approx(1000.0 / 7.0)

    def test_ramp_speed_limit_fallback(self):
        cfg = ScenarioConfig()
        assert cfg.ramp_speed_limit == cfg.geometry.speed_limit
        cfg.geometry.ramp_speed_limit = 20.0
        assert cfg.ramp_speed_limit == 20.0

    def test_fingerprint_tracks_content(self):
        a = single_lane_scenario()
        b = single_lane_scenario()
        assert a.fingerprint() == b.fingerprint()
        b.demand.cav_fraction = 1.0
        assert a.fingerprint() != b.fingerprint()


class TestValidation:
    def test_demand_bounds(self):
        with pytest.raises(ValueError):
            DemandConfig(cav_fraction=1.5).validate()
        with pytest.raises(ValueError):
            DemandConfig(mainline_inflow=-1.0).validate()

    def test_control_bounds(self):
        with pytest.raises(ValueError):
            ControlConfig(default_headway=1.0).validate()
        with pytest.raises(ValueError):
            ControlConfig(num_control_segments=0).validate()
