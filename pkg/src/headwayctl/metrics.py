"""Congestion scoring for episode records.

All functions are pure: they read the record (or plain arrays) and return
numbers.  The central quantity is the paired relative speed change between
a control run and its baseline run on the identical demand schedule; the
step reward used for training is the free-flow-relative speed deficit.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .engine import EpisodeRecord

__all__ = [
    "Z95",
    "step_reward",
    "vehicle_average_speeds",
    "delta_v",
    "paired_speed_change",
    "mean_ci",
    "delay_identity",
    "reward_consistency",
    "exit_throughput",
]

# two-sided 95% normal quantile
Z95 = 1.9599639845400545


def step_reward(speeds, v_free, queued: int, dt: float,
                scale: float) -> float:
    """Reward for one step: scaled sum of relative speed deficits.

    ``speeds`` are the on-road vehicle speeds, ``v_free`` the posted limit
    of the road each is on (scalar or per-vehicle).  Each of the ``queued``
    vehicles waiting at an entry counts as driving at speed zero, i.e.
    contributes exactly -1.  Perfect free flow with an empty queue gives 0.
    """
    speeds = np.asarray(speeds, dtype=float)
    v_free = np.asarray(v_free, dtype=float)
    if np.any(v_free <= 0.0):
        raise ValueError("free-flow speed must be positive")
    if queued < 0:
        raise ValueError("queued count must be >= 0")
    deficit = float(np.sum(speeds / v_free - 1.0)) - float(queued)
    return scale * deficit * dt


def vehicle_average_speeds(record: "EpisodeRecord") -> dict[str, float]:
    """Average speed per scheduled vehicle, keyed by id.

    Distance over time from the scheduled entry until exit, censored at the
    episode end for vehicles still inside (or still queued, which score 0).
    """
    horizon = record.n_steps * record.dt
    out: dict[str, float] = {}
    for v in record.vehicles:
        end = horizon if v.exited_s is None else min(v.exited_s, horizon)
        duration = end - v.scheduled_s
        if duration <= 0.0:
            raise ValueError(f"vehicle {v.vid} has no observation window")
        out[v.vid] = (v.dist_main + v.dist_ramp) / duration
    return out


def delta_v(control: Mapping[str, float],
            baseline: Mapping[str, float]) -> float:
    """Mean relative speed change over vehicles paired by id.

    Vehicles whose baseline speed is zero (scheduled but still queued when
    the episode ended) have no defined relative change and are left out of
    the mean; this is conservative, a controller gets no credit for moving
    a vehicle the baseline never moved.
    """
    if set(control) != set(baseline):
        raise ValueError("vehicle ids differ between control and baseline")
    total = 0.0
    n = 0
    for vid, vb in baseline.items():
        if vb <= 0.0:
            continue
        total += (control[vid] - vb) / vb
        n += 1
    if n == 0:
        raise ValueError("no baseline vehicle ever moved")
    return total / n


def paired_speed_change(control: "EpisodeRecord",
                        baseline: "EpisodeRecord") -> float:
    if control.demand_fingerprint != baseline.demand_fingerprint:
        raise ValueError("records do not share a demand schedule")
    return delta_v(vehicle_average_speeds(control),
                   vehicle_average_speeds(baseline))


def mean_ci(values: Sequence[float], z: float = Z95
            ) -> tuple[float, float, float]:
    """Normal-approximation confidence interval: (mean, lower, upper)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("no values")
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, mean, mean
    half = z * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, mean - half, mean + half


def delay_identity(record: "EpisodeRecord", v_free_main: float,
                   v_free_ramp: float) -> tuple[float, float, float, float]:
    """Check that accumulated reward equals realised delay, negated.

    For every vehicle that completed its trip the per-vehicle reward sum
    must equal free-flow travel time minus realised travel time (time in
    queue included).  Returns (reward side, delay side, |residual|,
    sum of |delays|); the residual is float noise only.
    """
    reward_side = 0.0
    delay_side = 0.0
    abs_delay = 0.0
    for v in record.vehicles:
        if v.exited_s is None:
            continue
        free_time = v.dist_main / v_free_main + v.dist_ramp / v_free_ramp
        d = (v.exited_s - v.scheduled_s) - free_time
        reward_side += v.reward_sum
        delay_side += -d
        abs_delay += abs(d)
    return reward_side, delay_side, abs(reward_side - delay_side), abs_delay


def reward_consistency(record: "EpisodeRecord", reward_scale: float
                       ) -> tuple[float, float, float]:
    """Per-vehicle reward sums vs the recorded step rewards.

    Both sides count every scheduled vehicle (queued time included), so
    they must agree up to float noise whether or not trips completed.
    """
    per_vehicle = sum(v.reward_sum for v in record.vehicles)
    per_step = float(record.rewards.sum()) / reward_scale
    return per_vehicle, per_step, abs(per_vehicle - per_step)


def exit_throughput(record: "EpisodeRecord", t_start: float,
                    t_end: float) -> float:
    """Completed trips per hour within the window (t_start, t_end]."""
    if not t_end > t_start:
        raise ValueError("empty window")
    k0 = round(t_start / record.dt)
    k1 = round(t_end / record.dt)
    k1 = min(k1, record.n_steps)
    before = int(record.exited_cum[k0 - 1]) if k0 > 0 else 0
    count = int(record.exited_cum[k1 - 1]) - before
    return count * 3600.0 / (t_end - t_start)
