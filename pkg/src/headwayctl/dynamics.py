"""Longitudinal car-following and lane-change decision models.

All functions here are pure: they map kinematic state to accelerations,
speed bounds, or lane-change verdicts without touching simulation state.
Units are SI throughout (meters, seconds, m/s, m/s^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

__all__ = [
    "IdmParams",
    "LaneChangeParams",
    "GapState",
    "LaneOption",
    "LaneContext",
    "idm_acceleration",
    "braking_travel",
    "safe_velocity",
    "brake_feasible",
    "lane_change_decision",
]

# Gap slack subtracted before any safety computation.  Keeps enforced gaps
# strictly positive under float rounding; large against accumulated position
# error, negligible against vehicle scale.
SAFETY_MARGIN = 1e-3

# Base acceleration-gain threshold for a discretionary lane change, divided
# by ``speed_gain_weight`` when applied (weight 5 -> effective 0.1 m/s^2).
INCENTIVE_BASE = 0.5


@dataclass
class IdmParams:
    """Parameters of the intelligent-driver car-following model.

    ``time_headway`` is the desired time gap; per-vehicle commands override
    it at runtime, never below 1.5 s.  ``max_decel`` is the physical braking
    capability: the engine never lets a vehicle shed speed faster than this,
    and the safety bound assumes leaders may brake at exactly this rate.
    """

    desired_speed: float = 31.29
    time_headway: float = 1.5
    max_accel: float = 1.0
    comfortable_decel: float = 1.5
    accel_exponent: float = 4.0
    min_gap: float = 2.0
    vehicle_length: float = 5.0
    max_decel: float = 4.5

    def validate(self) -> None:
        if self.desired_speed <= 0:
            raise ValueError("desired_speed must be positive")
        if self.time_headway < 0:
            raise ValueError("time_headway must be non-negative")
        for name in ("max_accel", "comfortable_decel", "min_gap",
                     "vehicle_length", "max_decel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_decel < self.comfortable_decel:
            raise ValueError("max_decel must be at least comfortable_decel")


@dataclass
class LaneChangeParams:
    """Knobs of the gap-acceptance / incentive lane-change model.

    assertiveness: scales the deceleration other drivers are asked to
        accept; higher values accept tighter gaps.
    speed_gain_weight: eagerness to change for speed; higher values lower
        the acceleration-gain threshold.
    cooperation: weight in [-1, 1] on the acceleration gains of affected
        followers when judging a discretionary change.
    safe_decel_limit: base deceleration (m/s^2) considered imposable on
        another vehicle, before assertiveness scaling.
    """

    assertiveness: float = 3.0
    speed_gain_weight: float = 5.0
    cooperation: float = 0.5
    safe_decel_limit: float = 1.0

    def validate(self) -> None:
        if self.assertiveness <= 0:
            raise ValueError("assertiveness must be positive")
        if self.speed_gain_weight <= 0:
            raise ValueError("speed_gain_weight must be positive")
        if not -1.0 <= self.cooperation <= 1.0:
            raise ValueError("cooperation must lie in [-1, 1]")
        if self.safe_decel_limit <= 0:
            raise ValueError("safe_decel_limit must be positive")


def idm_acceleration(v: float, gap: float, leader_v: float,
                     p: IdmParams, time_headway: Optional[float] = None) -> float:
    """IDM acceleration for a vehicle at speed ``v`` behind a leader.

    ``gap`` is bumper-to-bumper; pass ``math.inf`` for a free road, which
    drops the interaction term exactly.  ``time_headway`` overrides the
    parameter set's headway (used for commanded vehicles).

    Raises ValueError on non-finite speeds or a non-positive finite gap.
    """
    if not (math.isfinite(v) and math.isfinite(leader_v)):
        raise ValueError("speeds must be finite")
    T = p.time_headway if time_headway is None else time_headway
    free = p.max_accel * (1.0 - (v / p.desired_speed) ** p.accel_exponent)
    if math.isinf(gap):
        return free
    if not gap > 0.0:
        raise ValueError("gap must be positive (or inf for leaderless)")
    s_star = p.min_gap + v * T + v * (v - leader_v) / (
        2.0 * math.sqrt(p.max_accel * p.comfortable_decel))
    if s_star < p.min_gap:
        s_star = p.min_gap
    return free - p.max_accel * (s_star / gap) ** 2


def braking_travel(u: float, decel: float, dt: float) -> float:
    """Distance covered while braking from speed ``u`` at rate ``decel``.

    Uses the discrete semi-implicit update (speed drops first, then the
    vehicle moves), so this is exactly the ground the simulator's worst-case
    leader covers before standing still.
    """
    if u <= 0.0:
        return 0.0
    m = math.floor(u / (decel * dt))
    return dt * (m * u - decel * dt * m * (m + 1) / 2.0)


def safe_velocity(v: float, gap: float, leader_v: float, dt: float,
                  p: IdmParams) -> float:
    """Maximum next-step speed that can never cause a collision.

    Assumes the leader may brake at ``p.max_decel`` starting now and that the
    follower can do the same from the following step.  Solves the discrete
    stopping-distance inequality exactly, so a vehicle clamped to this speed
    every step keeps a positive gap indefinitely.  ``v`` is accepted for
    signature symmetry; the bound does not depend on the current speed.
    """
    if math.isinf(gap):
        return math.inf
    if not gap > 0.0:
        return 0.0
    budget = gap - SAFETY_MARGIN + braking_travel(leader_v, p.max_decel, dt)
    if budget <= 0.0:
        return 0.0
    # Invert w*dt + braking_travel(w) = budget; piecewise linear in w.
    c = p.max_decel * dt * dt
    m = math.floor((math.sqrt(1.0 + 8.0 * budget / c) - 1.0) / 2.0)
    return (budget + c * m * (m + 1) / 2.0) / (dt * (m + 1))


def brake_feasible(follower_v: float, gap: float, leader_v: float, dt: float,
                   p: IdmParams) -> bool:
    """True if a follower can always stop behind the leader from this state.

    This is the bare non-collision bound used to vet lane changes: both
    vehicles braking at ``max_decel`` must leave the gap positive.
    """
    if math.isinf(gap):
        return True
    if gap <= SAFETY_MARGIN:
        return False
    return (braking_travel(follower_v, p.max_decel, dt)
            <= gap - SAFETY_MARGIN + braking_travel(leader_v, p.max_decel, dt))


@dataclass(frozen=True)
class GapState:
    """A neighbour seen from the candidate position: bumper-to-bumper gap,
    its speed, and (for followers, whose reaction we predict) its headway."""

    gap: float
    speed: float
    headway: float = 1.5


@dataclass(frozen=True)
class LaneOption:
    """Immediate neighbours the ego would have after moving to ``lane``."""

    lane: int
    leader: Optional[GapState]
    follower: Optional[GapState]


@dataclass(frozen=True)
class LaneContext:
    """Snapshot handed to the lane-change decision.

    ``urgency`` only matters for mandatory changes: 0 keeps the normal
    gap-acceptance threshold, 1 relaxes it to the bare non-collision bound
    (reached at the end of a merge ramp).
    """

    ego_speed: float
    ego_headway: float
    own_leader: Optional[GapState]
    own_follower: Optional[GapState]
    options: tuple[LaneOption, ...]
    mandatory: bool = False
    urgency: float = 0.0


def _accel(v: float, neighbour: Optional[GapState], p: IdmParams,
           headway: float) -> float:
    if neighbour is None:
        return idm_acceleration(v, math.inf, 0.0, p, headway)
    return idm_acceleration(v, neighbour.gap, neighbour.speed, p, headway)


def _option_safe(ctx: LaneContext, opt: LaneOption, threshold: float,
                 p: IdmParams, dt: float) -> bool:
    # Hard bound first: both new pairs must be able to brake out of trouble.
    lead = opt.leader
    fol = opt.follower
    if lead is not None and not brake_feasible(ctx.ego_speed, lead.gap,
                                               lead.speed, dt, p):
        return False
    if fol is not None and not brake_feasible(fol.speed, fol.gap,
                                              ctx.ego_speed, dt, p):
        return False
    # Comfort bound: predicted IDM reactions must stay above -threshold.
    if lead is not None and lead.gap <= 0:
        return False
    if fol is not None and fol.gap <= 0:
        return False
    if lead is not None:
        a_ego = _accel(ctx.ego_speed, lead, p, ctx.ego_headway)
        if a_ego < -threshold:
            return False
    if fol is not None:
        a_fol = idm_acceleration(fol.speed, fol.gap, ctx.ego_speed, p,
                                 fol.headway)
        if a_fol < -threshold:
            return False
    return True


def lane_change_decision(ctx: LaneContext, idm: IdmParams,
                         lc: LaneChangeParams, dt: float = 0.5
                         ) -> Optional[int]:
    """Decide whether (and where) the ego should change lanes.

    Mandatory contexts (merge ramps) apply only the safety criterion, with
    the comfort threshold relaxed linearly in ``urgency`` up to the physical
    braking bound.  Discretionary contexts additionally require the
    cooperative acceleration-gain incentive to clear its threshold.
    Deterministic: equal inputs yield equal outputs.
    """
    base = lc.safe_decel_limit * lc.assertiveness
    if ctx.mandatory:
        u = min(1.0, max(0.0, ctx.urgency))
        # saturated urgency waives the comfort bound altogether
        threshold = (math.inf if u >= 1.0
                     else base + (idm.max_decel - base) * u)
        for opt in ctx.options:
            if _option_safe(ctx, opt, threshold, idm, dt):
                return opt.lane
        return None

    best_lane = None
    best_gain = -math.inf
    a_now = _accel(ctx.ego_speed, ctx.own_leader, idm, ctx.ego_headway)
    for opt in ctx.options:
        if not _option_safe(ctx, opt, base, idm, dt):
            continue
        a_new = _accel(ctx.ego_speed, opt.leader, idm, ctx.ego_headway)
        gain = a_new - a_now
        if opt.follower is not None:
            fol = opt.follower
            a_fol_new = idm_acceleration(fol.speed, fol.gap, ctx.ego_speed,
                                         idm, fol.headway)
            # That follower currently trails the option's leader across the
            # slot the ego would occupy.
            if opt.leader is not None:
                cur_gap = fol.gap + idm.vehicle_length + opt.leader.gap
                a_fol_now = idm_acceleration(fol.speed, cur_gap,
                                             opt.leader.speed, idm,
                                             fol.headway)
            else:
                a_fol_now = _accel(fol.speed, None, idm, fol.headway)
            gain += lc.cooperation * (a_fol_new - a_fol_now)
        if ctx.own_follower is not None:
            of = ctx.own_follower
            a_of_now = idm_acceleration(of.speed, of.gap, ctx.ego_speed, idm,
                                        of.headway)
            if ctx.own_leader is not None:
                freed_gap = (of.gap + idm.vehicle_length
                             + ctx.own_leader.gap)
                a_of_new = idm_acceleration(of.speed, freed_gap,
                                            ctx.own_leader.speed, idm,
                                            of.headway)
            else:
                a_of_new = _accel(of.speed, None, idm, of.headway)
            gain += lc.cooperation * (a_of_new - a_of_now)
        if gain > best_gain + 1e-12 or (best_lane is not None
                                        and abs(gain - best_gain) <= 1e-12
                                        and opt.lane < best_lane):
            best_gain = gain
            best_lane = opt.lane
    if best_lane is None or best_gain <= INCENTIVE_BASE / lc.speed_gain_weight:
        return None
    return best_lane
