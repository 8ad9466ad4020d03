"""Headway controllers and the fixed-value sweep.

A controller is anything with ``act(time, obs, vehicles, net)`` returning a
:class:`HeadwayCommand`; the engine polls it at the action interval and the
command stays latched in between.  Values address the controlled mainline
segments in upstream-to-downstream order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .engine import apply_commands, run_episode
from .learn.nets import (PolicyParameters, gaussian_logp, init_params,
                         policy_forward)
from .metrics import mean_ci, paired_speed_change
from .network import build_merge_network

if TYPE_CHECKING:
    from .engine import EpisodeRecord, Vehicle
    from .network import RoadNetwork
    from .sensing import SegmentObservation

__all__ = [
    "HeadwayCommand",
    "NullController",
    "FixedHeadwayController",
    "TimedZoneController",
    "PolicyController",
    "random_policy_controller",
    "apply_commands",
    "SweepRow",
    "SweepResult",
    "sweep_fixed_headway",
]


@dataclass(frozen=True)
class HeadwayCommand:
    """Desired time headway (s) per controlled segment."""

    values: tuple[float, ...]

    @classmethod
    def uniform(cls, value: float, n_segments: int) -> "HeadwayCommand":
        return cls(values=(float(value),) * n_segments)

    def clipped(self, lo: float, hi: float) -> "HeadwayCommand":
        return HeadwayCommand(values=tuple(
            min(hi, max(lo, v)) for v in self.values))


def _n_controlled(cfg: ScenarioConfig) -> int:
    return cfg.control.num_control_segments


class NullController:
    """Always commands the default headway; identical to no control."""

    def __init__(self, cfg: ScenarioConfig):
        self._cmd = HeadwayCommand.uniform(cfg.control.default_headway,
                                           _n_controlled(cfg))

    def act(self, time: float, obs: "SegmentObservation",
            vehicles: Sequence["Vehicle"], net: "RoadNetwork"
            ) -> HeadwayCommand:
        return self._cmd


class FixedHeadwayController:
    """Commands one fixed headway while the merge is underway.

    Active whenever a ramp vehicle is inside the merge zone; otherwise the
    default headway is restored.
    """

    def __init__(self, cfg: ScenarioConfig, headway: float):
        lo, hi = cfg.control.min_headway, cfg.control.max_headway
        if not lo <= headway <= hi:
            raise ValueError(f"fixed headway {headway} outside [{lo}, {hi}]")
        n = _n_controlled(cfg)
        self._on = HeadwayCommand.uniform(headway, n)
        self._off = HeadwayCommand.uniform(cfg.control.default_headway, n)

    def act(self, time: float, obs: "SegmentObservation",
            vehicles: Sequence["Vehicle"], net: "RoadNetwork"
            ) -> HeadwayCommand:
        zone_start = net.merge_zone_start_ramp()
        active = any(v.road == "ramp" and v.x >= zone_start
                     for v in vehicles)
        return self._on if active else self._off


class TimedZoneController:
    """Commands a fixed headway inside a wall-clock window.

    Harness for open-loop interventions: apply a headway (or nothing) for a
    set period regardless of traffic state.
    """

    def __init__(self, cfg: ScenarioConfig, headway: float, t_start: float,
                 t_end: float):
        n = _n_controlled(cfg)
        self._on = HeadwayCommand.uniform(headway, n)
        self._off = HeadwayCommand.uniform(cfg.control.default_headway, n)
        self.t_start = t_start
        self.t_end = t_end

    def act(self, time: float, obs: "SegmentObservation",
            vehicles: Sequence["Vehicle"], net: "RoadNetwork"
            ) -> HeadwayCommand:
        return self._on if self.t_start <= time < self.t_end else self._off


class PolicyController:
    """Neural policy over segment observations.

    Stochastic mode samples the Gaussian head and records the transition
    (for training); deterministic mode plays the mean.  Commands are always
    clipped into the legal headway range.
    """

    def __init__(self, cfg: ScenarioConfig, params: PolicyParameters,
                 stochastic: bool = False, seed: int = 0,
                 collect: bool = False):
        self.cfg = cfg
        self.params = params
        self.stochastic = stochastic
        self.collect = collect
        self.rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xAC7])
        self.lo = cfg.control.min_headway
        self.hi = cfg.control.max_headway
        self._speed_norm = cfg.idm.desired_speed
        self._jam = cfg.jam_density
        self.observations: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.log_probs: list[float] = []
        self.values: list[float] = []

    def reset_buffer(self) -> None:
        self.observations.clear()
        self.actions.clear()
        self.log_probs.clear()
        self.values.clear()

    def act(self, time: float, obs: "SegmentObservation",
            vehicles: Sequence["Vehicle"], net: "RoadNetwork"
            ) -> HeadwayCommand:
        vec = obs.as_policy_vector(self._speed_norm, self._jam)
        mean, value = policy_forward(self.params, vec[None, :])
        mean = mean[0]
        if self.stochastic:
            std = np.exp(self.params.log_std)
            raw = mean + std * self.rng.standard_normal(mean.shape)
            if self.collect:
                logp = float(gaussian_logp(mean, self.params.log_std, raw))
                self.observations.append(vec)
                self.actions.append(raw.copy())
                self.log_probs.append(logp)
                self.values.append(float(value[0]))
        else:
            raw = mean
        clipped = np.clip(raw, self.lo, self.hi)
        return HeadwayCommand(values=tuple(float(v) for v in clipped))


def random_policy_controller(cfg: ScenarioConfig, seed: int = 0,
                             stochastic: bool = True) -> PolicyController:
    """Freshly initialised (untrained) policy; useful as a stress case."""
    net = build_merge_network(cfg)
    obs_dim = 2 * net.num_segments
    act_dim = _n_controlled(cfg)
    mid = 0.5 * (cfg.control.min_headway + cfg.control.max_headway)
    params = init_params(obs_dim, act_dim, seed=seed, mean_bias=mid)
    return PolicyController(cfg, params, stochastic=stochastic, seed=seed)


@dataclass(frozen=True)
class SweepRow:
    headway: float
    mean_change: float
    ci_lower: float
    ci_upper: float
    per_seed: tuple[float, ...]


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    best_headway: float


def sweep_fixed_headway(cfg: ScenarioConfig, headways: Sequence[float],
                        seeds: Sequence[int]) -> SweepResult:
    """Evaluate fixed headway values against the paired human baseline.

    Every (headway, seed) cell reuses the baseline episode of that seed, so
    rows differ only through the controller.  Best value is the highest
    mean speed change; exact ties go to the smaller headway.
    """
    if not headways or not seeds:
        raise ValueError("need at least one headway and one seed")
    baselines = {s: run_episode(cfg, None, seed=s) for s in seeds}
    rows = []
    for headway in headways:
        controller = FixedHeadwayController(cfg, headway)
        changes = []
        for s in seeds:
            rec = run_episode(cfg, controller, seed=s)
            changes.append(paired_speed_change(rec, baselines[s]))
        mean, lo, hi = mean_ci(changes)
        rows.append(SweepRow(headway=float(headway), mean_change=mean,
                             ci_lower=lo, ci_upper=hi,
                             per_seed=tuple(changes)))
    best = min(rows, key=lambda r: (-r.mean_change, r.headway))
    return SweepResult(rows=tuple(rows), best_headway=best.headway)
