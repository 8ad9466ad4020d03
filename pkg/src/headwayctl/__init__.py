"""Microscopic merge-bottleneck simulator with segment headway control.

A short on-ramp feeds a mainline carriageway; connected vehicles in the
segments just upstream of the merge can be told to hold a larger time
headway, absorbing the merge disturbance.  The package provides the
simulator, congestion metrics, fixed-value and learned controllers, and a
command-line front end.
"""

from .config import (ControlConfig, DemandConfig, GeometryConfig,
                     ScenarioConfig, desk_scenario, load_scenario,
                     multi_lane_scenario, save_scenario,
                     single_lane_scenario)
from .control import (FixedHeadwayController, HeadwayCommand,
                      NullController, PolicyController,
                      TimedZoneController, sweep_fixed_headway)
from .dynamics import (IdmParams, LaneChangeParams, idm_acceleration,
                       lane_change_decision, safe_velocity)
from .engine import (CollisionError, DemandSchedule, EpisodeRecord,
                     Simulation, SpeedZone, Vehicle, generate_demand,
                     run_episode)
from .metrics import (delta_v, mean_ci, paired_speed_change, step_reward,
                      vehicle_average_speeds)
from .network import RoadNetwork, build_merge_network
from .sensing import SegmentObservation, observe

__version__ = "0.1.0"

__all__ = [
    "ControlConfig", "DemandConfig", "GeometryConfig", "ScenarioConfig",
    "desk_scenario", "load_scenario", "multi_lane_scenario",
    "save_scenario", "single_lane_scenario",
    "FixedHeadwayController", "HeadwayCommand", "NullController",
    "PolicyController", "TimedZoneController", "sweep_fixed_headway",
    "IdmParams", "LaneChangeParams", "idm_acceleration",
    "lane_change_decision", "safe_velocity",
    "CollisionError", "DemandSchedule", "EpisodeRecord", "Simulation",
    "SpeedZone", "Vehicle", "generate_demand", "run_episode",
    "delta_v", "mean_ci", "paired_speed_change", "step_reward",
    "vehicle_average_speeds",
    "RoadNetwork", "build_merge_network",
    "SegmentObservation", "observe",
    "__version__",
]
