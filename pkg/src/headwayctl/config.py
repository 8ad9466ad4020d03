"""Scenario configuration: dataclasses, YAML round-trip, and presets.

A scenario file is a YAML document with nested sections mirroring the
dataclass layout, e.g.::

    geometry:
      mainline_lanes: 1
      mainline_length: 2000.0
    demand:
      mainline_inflow: 1800.0
    idm:
      time_headway: 1.5

Unknown keys are rejected so typos fail loudly.  Every field has a default;
an empty document is the standard single-lane scenario.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import yaml

from .dynamics import IdmParams, LaneChangeParams

__all__ = [
    "GeometryConfig",
    "DemandConfig",
    "ControlConfig",
    "ScenarioConfig",
    "load_scenario",
    "save_scenario",
    "single_lane_scenario",
    "multi_lane_scenario",
    "desk_scenario",
]


@dataclass
class GeometryConfig:
    """Road layout. The ramp joins the rightmost mainline lane; its final
    ``merge_zone_length`` meters run parallel to the mainline and are the
    only stretch from which a merge can be executed."""

    mainline_lanes: int = 1
    mainline_length: float = 2000.0
    ramp_length: float = 300.0
    merge_position: float = 1000.0
    merge_zone_length: float = 200.0
    segment_length: float = 100.0
    speed_limit: float = 31.29
    ramp_speed_limit: float | None = None  # None -> same as mainline

    def validate(self) -> None:
        if self.mainline_lanes not in (1, 4):
            raise ValueError("mainline_lanes must be 1 or 4")
        if self.mainline_length <= 0:
            raise ValueError("mainline_length must be positive")
        if not 0 < self.merge_position < self.mainline_length:
            raise ValueError("merge_position must lie inside the mainline")
        if self.ramp_length <= 0:
            raise ValueError("ramp_length must be positive")
        if not 0 < self.merge_zone_length <= self.ramp_length:
            raise ValueError("merge_zone_length must lie in (0, ramp_length]")
        if self.merge_zone_length > self.merge_position:
            raise ValueError("merge zone extends upstream of the mainline")
        if self.segment_length <= 0:
            raise ValueError("segment_length must be positive")
        if self.speed_limit <= 0:
            raise ValueError("speed_limit must be positive")
        if self.ramp_speed_limit is not None and self.ramp_speed_limit <= 0:
            raise ValueError("ramp_speed_limit must be positive")


@dataclass
class DemandConfig:
    """Inflows in veh/hr.  Mainline demand is per lane and starts at t=0;
    ramp demand runs for ``merge_duration`` seconds starting at ``warmup``."""

    mainline_inflow: float = 1800.0
    ramp_inflow: float = 1800.0
    warmup: float = 200.0
    merge_duration: float = 30.0
    cav_fraction: float = 0.0

    def validate(self) -> None:
        if self.mainline_inflow < 0 or self.ramp_inflow < 0:
            raise ValueError("inflows must be non-negative")
        if self.warmup < 0 or self.merge_duration < 0:
            raise ValueError("warmup and merge_duration must be non-negative")
        if not 0.0 <= self.cav_fraction <= 1.0:
            raise ValueError("cav_fraction must lie in [0, 1]")


@dataclass
class ControlConfig:
    """Headway-command plumbing shared by every controller."""

    num_control_segments: int = 2
    default_headway: float = 1.5
    min_headway: float = 1.5
    max_headway: float = 6.0
    action_interval: float = 2.5

    def validate(self) -> None:
        if self.num_control_segments < 1:
            raise ValueError("num_control_segments must be >= 1")
        if not self.min_headway <= self.default_headway <= self.max_headway:
            raise ValueError("default_headway must lie within the bounds")
        if self.action_interval <= 0:
            raise ValueError("action_interval must be positive")


@dataclass
class ScenarioConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    idm: IdmParams = field(default_factory=IdmParams)
    lane_change: LaneChangeParams = field(default_factory=LaneChangeParams)
    sim_duration: float = 500.0
    dt: float = 0.5
    reward_scale: float = 1.0e-5

    def validate(self) -> None:
        self.geometry.validate()
        self.demand.validate()
        self.control.validate()
        self.idm.validate()
        self.lane_change.validate()
        if self.sim_duration <= 0:
            raise ValueError("sim_duration must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        steps = self.control.action_interval / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("action_interval must be a multiple of dt")

    @property
    def ramp_speed_limit(self) -> float:
        g = self.geometry
        return g.speed_limit if g.ramp_speed_limit is None else g.ramp_speed_limit

    @property
    def jam_density(self) -> float:
        """Vehicles per km per lane at standstill (normalisation constant)."""
        return 1000.0 / (self.idm.vehicle_length + self.idm.min_gap)

    def fingerprint(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTION_TYPES = {
    "geometry": GeometryConfig,
    "demand": DemandConfig,
    "control": ControlConfig,
    "idm": IdmParams,
    "lane_change": LaneChangeParams,
}


def _build_section(cls: type, data: dict[str, Any], name: str) -> Any:
    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(data) - known
    if bad:
        raise ValueError(f"unknown keys in section '{name}': {sorted(bad)}")
    return cls(**data)


def scenario_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ValueError(f"section '{name}' must be a mapping")
            kwargs[name] = _build_section(cls, section, name)
    top_fields = {f.name for f in dataclasses.fields(ScenarioConfig)}
    bad = set(data) - top_fields
    if bad:
        raise ValueError(f"unknown top-level keys: {sorted(bad)}")
    kwargs.update(data)
    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("scenario file must contain a mapping")
    # Keep IDM desired speed in lockstep with the posted limit when the file
    # sets only the limit.
    idm_section = data.get("idm") or {}
    geo_section = data.get("geometry") or {}
    if "speed_limit" in geo_section and "desired_speed" not in idm_section:
        idm_section = dict(idm_section)
        idm_section["desired_speed"] = geo_section["speed_limit"]
        data = dict(data)
        data["idm"] = idm_section
    return scenario_from_dict(data)


def save_scenario(cfg: ScenarioConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(dataclasses.asdict(cfg), fh, sort_keys=False)


def single_lane_scenario(**overrides: Any) -> ScenarioConfig:
    """Single-lane merge scenario at the standard operating point."""
    cfg = ScenarioConfig()
    return _apply_overrides(cfg, overrides)


def multi_lane_scenario(**overrides: Any) -> ScenarioConfig:
    """Four-lane variant; the ramp pulse runs longer to matter at scale."""
    cfg = ScenarioConfig(
        geometry=GeometryConfig(mainline_lanes=4),
        demand=DemandConfig(merge_duration=50.0),
    )
    return _apply_overrides(cfg, overrides)


def desk_scenario(**overrides: Any) -> ScenarioConfig:
    """Shortened single-lane scenario for desk-scale training runs.

    150 s episodes with a slightly reduced mainline inflow keep episodes
    cheap while the ramp pulse still causes a measurable slowdown.
    """
    cfg = ScenarioConfig(
        demand=DemandConfig(mainline_inflow=1620.0, warmup=50.0,
                            merge_duration=30.0, cav_fraction=0.8),
        sim_duration=150.0,
    )
    return _apply_overrides(cfg, overrides)


def _apply_overrides(cfg: ScenarioConfig, overrides: dict[str, Any]
                     ) -> ScenarioConfig:
    for key, value in overrides.items():
        hit = False
        for section in ("geometry", "demand", "control", "idm",
                        "lane_change"):
            obj = getattr(cfg, section)
            if hasattr(obj, key):
                setattr(obj, key, value)
                hit = True
                break
        if not hit:
            if not hasattr(cfg, key):
                raise ValueError(f"unknown scenario field: {key}")
            setattr(cfg, key, value)
    if "speed_limit" in overrides and "desired_speed" not in overrides:
        cfg.idm.desired_speed = cfg.geometry.speed_limit
    cfg.validate()
    return cfg
