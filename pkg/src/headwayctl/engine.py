"""Discrete-time microscopic simulation of the merge network.

One engine step advances the world by ``dt`` through a fixed sub-phase
order: apply headway commands, evaluate and execute lane changes from the
pre-step snapshot, compute car-following accelerations, clamp to the safety
bound and integrate (speed first, then position), retire vehicles that left
the mainline, insert due vehicles whose spawn gap is open, and finally
record reward and segment observations.

Vehicles never collide: every speed update is capped by the discrete
stopping-distance bound and every lane-change is vetted against the same
bound, so bumper-to-bumper gaps stay positive.  An overlap therefore aborts
the run, it can only mean a bug.
"""

from __future__ import annotations

import csv
import hashlib
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .config import ScenarioConfig
from .dynamics import (SAFETY_MARGIN, GapState, LaneContext, LaneOption,
                       brake_feasible, idm_acceleration,
                       lane_change_decision, safe_velocity)
from .network import RoadNetwork, build_merge_network
from .sensing import SegmentObservation, observe

__all__ = [
    "CollisionError",
    "Vehicle",
    "DemandEntry",
    "DemandSchedule",
    "generate_demand",
    "save_demand",
    "load_demand",
    "SpeedZone",
    "EntryQueue",
    "Simulation",
    "EpisodeRecord",
    "apply_commands",
    "run_episode",
]

MAIN = "main"
RAMP = "ramp"

# Steps a vehicle sits out after any lane change before considering another
# discretionary one; stops single-step flip-flopping.
LC_COOLDOWN_STEPS = 4

# Within this distance of the ramp end the comfort criterion is waived and a
# merge only needs the braking-feasibility bound; a vehicle parked at the
# wall must eventually get out.
WALL_RELEASE_DISTANCE = 10.0


class CollisionError(RuntimeError):
    """Raised when two vehicles overlap; indicates an engine defect."""


def apply_commands(vehicles: Sequence["Vehicle"], net: RoadNetwork,
                   values: Sequence[float], default_headway: float) -> None:
    """Set every vehicle's effective time headway from the command.

    Connected vehicles inside a controlled segment take that segment's
    commanded value; everyone else (human drivers, ramp traffic, connected
    vehicles elsewhere) reverts to the default.
    """
    slots = {seg: j for j, seg in enumerate(net.controlled_segments)}
    for veh in vehicles:
        value = default_headway
        if veh.is_cav and veh.road == MAIN:
            slot = slots.get(net.segment_of(veh.x))
            if slot is not None:
                value = float(values[slot])
        veh.headway = value


class Vehicle:
    __slots__ = ("vid", "is_cav", "road", "lane", "x", "v", "headway",
                 "scheduled_s", "entered_s", "exited_s", "dist_main",
                 "dist_ramp", "reward_sum", "lc_cooldown")

    def __init__(self, vid: str, is_cav: bool, road: str, lane: int,
                 x: float, v: float, headway: float, scheduled_s: float,
                 entered_s: float):
        self.vid = vid
        self.is_cav = is_cav
        self.road = road
        self.lane = lane
        self.x = x
        self.v = v
        self.headway = headway
        self.scheduled_s = scheduled_s
        self.entered_s = entered_s
        self.exited_s: Optional[float] = None
        self.dist_main = 0.0
        self.dist_ramp = 0.0
        self.reward_sum = 0.0  # accumulated (v/v_free - 1) * dt
        self.lc_cooldown = 0

    def __repr__(self) -> str:  # diagnostics only
        return (f"Vehicle({self.vid}, {self.road}/{self.lane}, "
                f"x={self.x:.1f}, v={self.v:.1f})")


@dataclass(frozen=True)
class DemandEntry:
    vid: str
    vclass: str  # "human" | "cav"
    origin: str  # MAIN | RAMP
    lane: int
    scheduled_s: float


@dataclass(frozen=True)
class DemandSchedule:
    """Planned entries, sorted by scheduled time.

    The entry times depend only on the scenario; the seed controls which
    vehicles are connected (exactly round(N * fraction) of them, so the
    realised fraction is within one vehicle of the configured one).
    """

    entries: tuple[DemandEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def cav_count(self) -> int:
        return sum(1 for e in self.entries if e.vclass == "cav")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(f"{e.vid},{e.vclass},{e.origin},{e.lane},"
                     f"{e.scheduled_s!r};".encode())
        return h.hexdigest()


def _snap(t: float, dt: float) -> float:
    return round(t / dt) * dt


def generate_demand(cfg: ScenarioConfig, seed: int) -> DemandSchedule:
    """Build the demand schedule for a scenario under ``seed``.

    Mainline lanes are loaded uniformly: each lane gets the configured
    per-lane inflow with evenly staggered first departures.  Ramp entries
    run only during the merge pulse.  All times snap to the step grid.
    """
    cfg.validate()
    dt = cfg.dt
    raw: list[tuple[float, int, int]] = []  # (time, origin_order, lane)
    lanes = cfg.geometry.mainline_lanes
    if cfg.demand.mainline_inflow > 0:
        gap_s = 3600.0 / cfg.demand.mainline_inflow
        for lane in range(lanes):
            t = _snap(lane * gap_s / lanes, dt)
            while t < cfg.sim_duration:
                raw.append((t, 0, lane))
                t = _snap(t + gap_s, dt)
    if cfg.demand.ramp_inflow > 0 and cfg.demand.merge_duration > 0:
        gap_s = 3600.0 / cfg.demand.ramp_inflow
        t = _snap(cfg.demand.warmup, dt)
        end = cfg.demand.warmup + cfg.demand.merge_duration
        while t < min(end, cfg.sim_duration):
            raw.append((t, 1, 0))
            t = _snap(t + gap_s, dt)
    raw.sort()
    n = len(raw)
    n_cav = int(round(n * cfg.demand.cav_fraction))
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED])
    cav_idx = set(rng.choice(n, size=n_cav, replace=False).tolist()
                  ) if n_cav else set()
    entries = tuple(
        DemandEntry(vid=f"v{i:04d}",
                    vclass="cav" if i in cav_idx else "human",
                    origin=MAIN if origin == 0 else RAMP,
                    lane=lane, scheduled_s=t)
        for i, (t, origin, lane) in enumerate(raw))
    return DemandSchedule(entries=entries)


def save_demand(schedule: DemandSchedule, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["vid", "vclass", "origin", "lane", "scheduled_s"])
        for e in schedule.entries:
            w.writerow([e.vid, e.vclass, e.origin, e.lane,
                        repr(e.scheduled_s)])


def load_demand(path: Union[str, Path]) -> DemandSchedule:
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            entries.append(DemandEntry(
                vid=row["vid"], vclass=row["vclass"], origin=row["origin"],
                lane=int(row["lane"]), scheduled_s=float(row["scheduled_s"])))
    entries.sort(key=lambda e: (e.scheduled_s, e.origin, e.lane))
    return DemandSchedule(entries=tuple(entries))


@dataclass(frozen=True)
class SpeedZone:
    """Test-harness speed-limit override on a mainline stretch."""

    start_x: float
    end_x: float
    limit: float
    t_start: float
    t_end: float


class EntryQueue:
    """FIFO of scheduled entries for one origin lane.

    A vehicle becomes *due* at its scheduled step and waits (counted, at
    speed zero) until the spawn gap opens.  Order is never reshuffled.
    """

    def __init__(self, entries: Sequence[DemandEntry], dt: float):
        self.entries = list(entries)
        self.due_steps = [round(e.scheduled_s / dt) for e in self.entries]
        self.next_idx = 0

    def head_due(self, step: int) -> Optional[DemandEntry]:
        if self.next_idx < len(self.entries) and \
                self.due_steps[self.next_idx] <= step:
            return self.entries[self.next_idx]
        return None

    def pop(self) -> DemandEntry:
        e = self.entries[self.next_idx]
        self.next_idx += 1
        return e

    def waiting(self, step: int) -> int:
        count = 0
        i = self.next_idx
        while i < len(self.entries) and self.due_steps[i] <= step:
            count += 1
            i += 1
        return count


@dataclass
class VehicleRecord:
    vid: str
    vclass: str
    origin: str
    lane: int
    scheduled_s: float
    entered_s: Optional[float]
    exited_s: Optional[float]
    dist_main: float
    dist_ramp: float
    reward_sum: float


@dataclass
class EpisodeRecord:
    """Everything needed to score and replay-check one episode."""

    seed: int
    dt: float
    n_steps: int
    cfg_fingerprint: str
    demand_fingerprint: str
    vehicles: list[VehicleRecord]
    rewards: np.ndarray        # (n_steps,)
    mean_speed: np.ndarray     # (n_steps, n_segments)
    density: np.ndarray        # (n_steps, n_segments)
    commands: np.ndarray       # (n_steps, n_control_segments)
    queue_len: np.ndarray      # (n_steps,) vehicles due but not inserted
    active_count: np.ndarray   # (n_steps,)
    exited_cum: np.ndarray     # (n_steps,)
    min_gap: np.ndarray        # (n_steps,) smallest same-lane gap seen
    merges: np.ndarray         # (n_steps,) executed ramp merges

    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for v in self.vehicles:
            h.update(repr((v.vid, v.vclass, v.origin, v.lane, v.scheduled_s,
                           v.entered_s, v.exited_s, v.dist_main, v.dist_ramp,
                           v.reward_sum)).encode())
        for arr in (self.rewards, self.mean_speed, self.density,
                    self.commands, self.queue_len.astype(float),
                    self.active_count.astype(float),
                    self.exited_cum.astype(float), self.min_gap,
                    self.merges.astype(float)):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()

    def save_vehicles_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["vid", "vclass", "origin", "lane", "scheduled_s",
                        "entered_s", "exited_s", "dist_main", "dist_ramp",
                        "reward_sum"])
            for v in self.vehicles:
                w.writerow([v.vid, v.vclass, v.origin, v.lane,
                            repr(v.scheduled_s),
                            "" if v.entered_s is None else repr(v.entered_s),
                            "" if v.exited_s is None else repr(v.exited_s),
                            repr(v.dist_main), repr(v.dist_ramp),
                            repr(v.reward_sum)])

    def save_steps_csv(self, path: Union[str, Path]) -> None:
        n_seg = self.mean_speed.shape[1]
        n_cmd = self.commands.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = (["step", "time_s", "reward", "queued", "active",
                       "exited", "min_gap", "merges"]
                      + [f"cmd{j}" for j in range(n_cmd)]
                      + [f"speed{j:02d}" for j in range(n_seg)]
                      + [f"density{j:02d}" for j in range(n_seg)])
            w.writerow(header)
            for k in range(self.n_steps):
                row = [k, (k + 1) * self.dt, repr(float(self.rewards[k])),
                       int(self.queue_len[k]), int(self.active_count[k]),
                       int(self.exited_cum[k]),
                       repr(float(self.min_gap[k])), int(self.merges[k])]
                row += [repr(float(c)) for c in self.commands[k]]
                row += [repr(float(s)) for s in self.mean_speed[k]]
                row += [repr(float(d)) for d in self.density[k]]
                w.writerow(row)


class Simulation:
    """Mutable world state plus the step routine.

    Lane lists hold vehicles sorted by increasing position (front bumper);
    within a lane nobody passes anybody, so order is stable between changes.
    """

    def __init__(self, cfg: ScenarioConfig, net: Optional[RoadNetwork] = None,
                 schedule: Optional[DemandSchedule] = None, seed: int = 0,
                 insertion_hold_until: float = 0.0,
                 speed_zone: Optional[SpeedZone] = None):
        cfg.validate()
        self.cfg = cfg
        self.net = net if net is not None else build_merge_network(cfg)
        self.seed = seed
        self.schedule = (schedule if schedule is not None
                         else generate_demand(cfg, seed))
        self.insertion_hold_until = insertion_hold_until
        self.speed_zone = speed_zone

        self.main_lanes: list[list[Vehicle]] = [
            [] for _ in range(cfg.geometry.mainline_lanes)]
        self.ramp: list[Vehicle] = []
        self.step_idx = 0
        self.exited: list[Vehicle] = []

        by_origin_lane: dict[tuple[str, int], list[DemandEntry]] = {}
        for e in self.schedule.entries:
            by_origin_lane.setdefault((e.origin, e.lane), []).append(e)
        self.queues = {key: EntryQueue(entries, cfg.dt)
                       for key, entries in sorted(by_origin_lane.items())}

        k = len(self.net.controlled_segments)
        self.current_command = np.full(k, cfg.control.default_headway)
        # follower id -> (projected gap, merger speed), rebuilt every step
        self._yields: dict[str, tuple[float, float]] = {}

        # per-step logs
        self._rewards: list[float] = []
        self._speeds: list[np.ndarray] = []
        self._density: list[np.ndarray] = []
        self._commands: list[np.ndarray] = []
        self._queue_len: list[int] = []
        self._active: list[int] = []
        self._exited: list[int] = []
        self._min_gap: list[float] = []
        self._merges: list[int] = []

    # -- helpers -----------------------------------------------------------

    @property
    def time(self) -> float:
        return self.step_idx * self.cfg.dt

    def active_vehicles(self) -> list[Vehicle]:
        out: list[Vehicle] = []
        for lane in self.main_lanes:
            out.extend(lane)
        out.extend(self.ramp)
        return out

    def ramp_zone_occupied(self) -> bool:
        zone_start = self.net.merge_zone_start_ramp()
        return any(v.x >= zone_start for v in self.ramp)

    def current_observation(self, time: Optional[float] = None
                            ) -> SegmentObservation:
        segs = []
        speeds = []
        for lane in self.main_lanes:
            for veh in lane:
                segs.append(self.net.segment_of(veh.x))
                speeds.append(veh.v)
        for veh in self.ramp:
            segs.append(self.net.ramp_segment)
            speeds.append(veh.v)
        return observe(self.net, np.array(segs, dtype=int),
                       np.array(speeds, dtype=float),
                       self.time if time is None else time)

    def _desired_speed(self, veh: Vehicle) -> float:
        if veh.road == RAMP:
            return min(self.cfg.idm.desired_speed, self.net.ramp_speed_limit)
        z = self.speed_zone
        if (z is not None and z.t_start <= self.time < z.t_end
                and z.start_x <= veh.x < z.end_x):
            return z.limit
        return self.cfg.idm.desired_speed

    # -- sub-phases --------------------------------------------------------

    def _neighbours(self, lane: list[Vehicle], x: float
                    ) -> tuple[Optional[Vehicle], Optional[Vehicle]]:
        """Vehicles around mainline position ``x``: (leader, follower)."""
        keys = [v.x for v in lane]
        i = bisect_right(keys, x)
        leader = lane[i] if i < len(lane) else None
        follower = lane[i - 1] if i > 0 else None
        return leader, follower

    def _merge_context(self, veh: Vehicle) -> Optional[LaneContext]:
        net = self.net
        d_end = net.ramp_length - veh.x
        zone = net.merge_zone_length
        if d_end > zone:
            return None
        x_m = net.ramp_to_mainline(veh.x)
        leader, follower = self._neighbours(self.main_lanes[0], x_m)
        length = self.cfg.idm.vehicle_length
        lead_gs = None
        if leader is not None:
            lead_gs = GapState(gap=leader.x - length - x_m, speed=leader.v)
        fol_gs = None
        if follower is not None:
            # Acceptance judges the follower's braking tolerance, so it uses
            # the default headway; a commanded (longer) cruise gap must not
            # tighten the bar, or widening gaps would buy nothing.
            fol_gs = GapState(gap=x_m - length - follower.x,
                              speed=follower.v,
                              headway=self.cfg.control.default_headway)
        urgency = 1.0 - d_end / zone
        if d_end <= WALL_RELEASE_DISTANCE:
            urgency = 1.0
        return LaneContext(
            ego_speed=veh.v, ego_headway=veh.headway,
            own_leader=None, own_follower=None,
            options=(LaneOption(lane=0, leader=lead_gs, follower=fol_gs),),
            mandatory=True, urgency=urgency)

    def _discretionary_context(self, veh: Vehicle) -> Optional[LaneContext]:
        lanes = self.main_lanes
        li = veh.lane
        length = self.cfg.idm.vehicle_length
        own = lanes[li]
        i = own.index(veh)
        own_leader = None
        if i + 1 < len(own):
            nb = own[i + 1]
            own_leader = GapState(gap=nb.x - length - veh.x, speed=nb.v)
        own_follower = None
        if i > 0:
            nb = own[i - 1]
            own_follower = GapState(gap=veh.x - length - nb.x, speed=nb.v,
                                    headway=nb.headway)
        options = []
        for target in (li - 1, li + 1):
            if not 0 <= target < len(lanes):
                continue
            leader, follower = self._neighbours(lanes[target], veh.x)
            lead_gs = (GapState(gap=leader.x - length - veh.x,
                                speed=leader.v)
                       if leader is not None else None)
            fol_gs = (GapState(gap=veh.x - length - follower.x,
                               speed=follower.v, headway=follower.headway)
                      if follower is not None else None)
            options.append(LaneOption(lane=target, leader=lead_gs,
                                      follower=fol_gs))
        if not options:
            return None
        return LaneContext(ego_speed=veh.v, ego_headway=veh.headway,
                           own_leader=own_leader, own_follower=own_follower,
                           options=tuple(options))

    def _recheck_and_place(self, veh: Vehicle, target_lane: int,
                           x_new: float) -> bool:
        """Final gate against the *current* lane contents, then move."""
        idm = self.cfg.idm
        dt = self.cfg.dt
        lane = self.main_lanes[target_lane]
        leader, follower = self._neighbours(lane, x_new)
        if leader is not None:
            gap = leader.x - idm.vehicle_length - x_new
            if gap <= SAFETY_MARGIN or not brake_feasible(
                    veh.v, gap, leader.v, dt, idm):
                return False
        if follower is not None:
            gap = x_new - idm.vehicle_length - follower.x
            if gap <= SAFETY_MARGIN or not brake_feasible(
                    follower.v, gap, veh.v, dt, idm):
                return False
        if veh.road == RAMP:
            self.ramp.remove(veh)
        else:
            self.main_lanes[veh.lane].remove(veh)
        veh.road = MAIN
        veh.lane = target_lane
        veh.x = x_new
        veh.lc_cooldown = LC_COOLDOWN_STEPS
        keys = [v.x for v in lane]
        lane.insert(bisect_right(keys, x_new), veh)
        return True

    def _register_yield(self, veh: Vehicle) -> None:
        """Ask a mainline follower to ease off for this blocked merger.

        Cooperation triggers on visible urgency: only a merger over the
        last half of the merge zone is nosing in hard enough for mainline
        drivers to react, so blocked vehicles further back do not set off
        braking cascades along the whole approach.  The merger's projected
        position acts as a virtual leader for the nearest follower not
        already yielding to a more urgent merger, so several gaps open in
        parallel (zip style).  The response is capped at comfortable
        deceleration when applied: drivers make room, they do not
        emergency-brake for a car that is still on the ramp.
        """
        if self.net.ramp_length - veh.x > self.net.merge_zone_length / 2:
            return
        x_m = self.net.ramp_to_mainline(veh.x)
        lane = self.main_lanes[0]
        keys = [v.x for v in lane]
        i = bisect_right(keys, x_m) - 1
        length = self.cfg.idm.vehicle_length
        while i >= 0 and lane[i].vid in self._yields:
            i -= 1
        if i < 0:
            return
        gap = x_m - length - lane[i].x
        if gap > 0.5:
            self._yields[lane[i].vid] = (gap, veh.v)

    def _lane_changes(self) -> int:
        idm = self.cfg.idm
        lc = self.cfg.lane_change
        dt = self.cfg.dt
        merges = 0
        self._yields = {}

        # Mandatory merges, most urgent (closest to the ramp end) first.
        candidates = sorted(self.ramp, key=lambda v: -v.x)
        for veh in candidates:
            ctx = self._merge_context(veh)
            if ctx is None:
                continue
            target = lane_change_decision(ctx, idm, lc, dt)
            merged = False
            if target is not None:
                x_m = self.net.ramp_to_mainline(veh.x)
                merged = self._recheck_and_place(veh, target, x_m)
                if merged:
                    merges += 1
            if not merged:
                self._register_yield(veh)

        # Discretionary changes on a multi-lane mainline.
        if len(self.main_lanes) > 1:
            movers = []
            for lane in self.main_lanes:
                for veh in lane:
                    if veh.lc_cooldown > 0:
                        continue
                    ctx = self._discretionary_context(veh)
                    if ctx is None:
                        continue
                    target = lane_change_decision(ctx, idm, lc, dt)
                    if target is not None:
                        movers.append((veh, target))
            movers.sort(key=lambda m: (-m[0].x, m[0].lane, m[0].vid))
            for veh, target in movers:
                self._recheck_and_place(veh, target, veh.x)
        return merges

    def _advance_lane(self, lane: list[Vehicle], on_ramp: bool
                      ) -> tuple[float, float]:
        """IDM + safety clamp + integration for one lane.

        Returns (reward contribution unscaled, minimum post-move gap).
        """
        if not lane:
            return 0.0, math.inf
        idm = self.cfg.idm
        dt = self.cfg.dt
        n = len(lane)
        x = np.array([v.x for v in lane])
        v = np.array([v.v for v in lane])
        T = np.array([v.headway for v in lane])
        v0 = np.array([self._desired_speed(veh) for veh in lane])

        gap = np.empty(n)
        lead_v = np.empty(n)
        gap[:-1] = x[1:] - idm.vehicle_length - x[:-1]
        lead_v[:-1] = v[1:]
        gap[-1] = np.inf
        lead_v[-1] = 0.0
        idm_gap = gap
        if on_ramp:
            # The ramp end enters the hard safety clamp (v_safe below) as a
            # stopped obstacle, but not the IDM interaction term: drivers
            # treat a lane end as a planned stop, approached on a comfortable
            # braking envelope, not as a car to shy away from half a
            # kilometre out.
            idm_gap = gap.copy()
            gap[-1] = self.net.ramp_length - x[-1]

        s_star = idm.min_gap + v * T + v * (v - lead_v) / (
            2.0 * math.sqrt(idm.max_accel * idm.comfortable_decel))
        np.maximum(s_star, idm.min_gap, out=s_star)
        with np.errstate(divide="ignore"):
            inter = (s_star / idm_gap) ** 2
        accel = idm.max_accel * (1.0 - (v / v0) ** idm.accel_exponent - inter)

        if on_ramp:
            # Stop-at-lane-end envelope: above it, brake so the remaining
            # distance still suffices at twice the comfortable rate.  A
            # merging driver holds speed while hunting for a slot and keeps
            # firm (not comfort-level) braking in reserve for the end.
            v_keep = np.sqrt(4.0 * idm.comfortable_decel
                             * np.maximum(self.net.ramp_length - x, 0.0))
            over = v > v_keep
            if over.any():
                cap = np.maximum((v_keep - v) / dt, -idm.max_decel)
                accel = np.where(over & (cap < accel), cap, accel)

        if on_ramp and self.main_lanes[0]:
            # Acceleration-lane behavior through the merge zone.  Two
            # comfort-bounded adjustments, both floored by v_keep, the speed
            # the driver could still shed at comfortable braking before the
            # ramp end: while faster than v_keep there is ramp left to use,
            # so nobody paces a distant queue.  The ramp end itself stays the
            # hard safety constraint.
            #   1. speed sync: relax toward the pace of the mainline traffic
            #      around the projected position (the slot neighbourhood, not
            #      the whole approach: a jam further downstream is the
            #      leader's problem after merging);
            #   2. slot aiming: fall in toward the near front of the gap
            #      behind the next mainline vehicle (half the usual headway,
            #      so the slot is entered front-of-centre, leaving room for
            #      the follower check).
            zone_from = self.net.merge_zone_start_ramp()
            lane0 = self.main_lanes[0]
            keys = [m.x for m in lane0]
            length = idm.vehicle_length
            b = idm.comfortable_decel
            for i, veh in enumerate(lane):
                if veh.x < zone_from:
                    continue
                x_m = self.net.ramp_to_mainline(veh.x)
                vk = float(v_keep[i])
                lo = bisect_left(keys, x_m - 30.0)
                hi = bisect_right(keys, x_m + 60.0)
                if lo < hi:
                    v_sync = sum(m.v for m in lane0[lo:hi]) / (hi - lo)
                    target = max(v_sync, vk)
                    if v[i] > target:
                        sync = max((target - v[i]) / 2.0, -b)
                        if sync < accel[i]:
                            accel[i] = sync
                j = bisect_right(keys, x_m + length)
                if j < len(lane0) and lane0[j].v >= vk:
                    align = idm_acceleration(float(v[i]),
                                             keys[j] - length - x_m,
                                             lane0[j].v, idm,
                                             0.5 * float(T[i]))
                    align = max(align, -b)
                    if align < accel[i]:
                        accel[i] = align

        if not on_ramp and lane is self.main_lanes[0] and self._yields:
            # Yielding opens just enough room for the merger to pass the
            # acceptance check (half the usual headway), not a full
            # equilibrium gap; see _register_yield.
            for i, veh in enumerate(lane):
                y = self._yields.get(veh.vid)
                if y is None:
                    continue
                coop = idm_acceleration(float(v[i]), y[0], y[1], idm,
                                        0.5 * float(T[i]))
                coop = max(coop, -idm.comfortable_decel)
                if coop < accel[i]:
                    accel[i] = coop

        v_safe = self._safe_velocity_vec(gap, lead_v)
        v_new = np.maximum(np.maximum(0.0, v - idm.max_decel * dt),
                           np.minimum(v + accel * dt, v_safe))
        x_new = x + v_new * dt

        if n > 1:
            gaps_after = x_new[1:] - idm.vehicle_length - x_new[:-1]
            min_gap = float(gaps_after.min())
            if min_gap <= 0.0:
                i = int(np.argmin(gaps_after))
                raise CollisionError(
                    f"overlap at t={self.time:.1f}s between "
                    f"{lane[i].vid} and {lane[i + 1].vid} "
                    f"(gap {min_gap:.3f} m)")
        else:
            min_gap = math.inf

        v_free = (self.net.ramp_speed_limit if on_ramp
                  else self.net.speed_limit)
        reward = float(np.sum(v_new / v_free - 1.0)) * dt

        for i, veh in enumerate(lane):
            veh.v = float(v_new[i])
            veh.x = float(x_new[i])
            moved = float(v_new[i]) * dt
            if on_ramp:
                veh.dist_ramp += moved
            else:
                veh.dist_main += moved
            veh.reward_sum += (float(v_new[i]) / v_free - 1.0) * dt
            if veh.lc_cooldown > 0:
                veh.lc_cooldown -= 1
        return reward, min_gap

    def _safe_velocity_vec(self, gap: np.ndarray, lead_v: np.ndarray
                           ) -> np.ndarray:
        idm = self.cfg.idm
        dt = self.cfg.dt
        D = idm.max_decel
        m_lead = np.floor(lead_v / (D * dt))
        travel = dt * (m_lead * lead_v - D * dt * m_lead * (m_lead + 1) / 2.0)
        budget = gap - SAFETY_MARGIN + travel
        out = np.zeros_like(budget)
        inf_mask = np.isinf(budget)
        out[inf_mask] = np.inf
        ok = (~inf_mask) & (budget > 0.0)
        if np.any(ok):
            c = D * dt * dt
            m = np.floor((np.sqrt(1.0 + 8.0 * budget[ok] / c) - 1.0) / 2.0)
            out[ok] = (budget[ok] + c * m * (m + 1) / 2.0) / (dt * (m + 1))
        return out

    def _insertion_speed(self, gap: float, leader_v: float) -> float:
        """Entry speed: desired speed capped by safety and by the largest
        speed that needs no immediate braking toward the current leader.

        The equilibrium cap mimics flow-matched insertion; entering at the
        raw safe speed would slam the brakes right at the boundary and send
        a phantom wave upstream of every single entry.
        """
        idm = self.cfg.idm
        dt = self.cfg.dt
        v0 = idm.desired_speed
        hi = min(v0, safe_velocity(0.0, gap, leader_v, dt, idm))
        if hi <= 0.0:
            return 0.0
        if math.isinf(gap):
            return hi
        T = self.cfg.control.default_headway
        if idm_acceleration(hi, gap, leader_v, idm, T) >= 0.0:
            return hi
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if idm_acceleration(mid, gap, leader_v, idm, T) >= 0.0:
                lo = mid
            else:
                hi = mid
        return lo

    def _insertions(self) -> None:
        if self.time < self.insertion_hold_until:
            return
        idm = self.cfg.idm
        threshold = idm.min_gap + idm.vehicle_length
        t_entry = (self.step_idx + 1) * self.cfg.dt
        for (origin, lane_idx), queue in self.queues.items():
            entry = queue.head_due(self.step_idx)
            if entry is None:
                continue
            lane = (self.ramp if origin == RAMP
                    else self.main_lanes[lane_idx])
            if lane:
                leader = lane[0]
                spawn_gap = leader.x - idm.vehicle_length
                leader_v = leader.v
            else:
                spawn_gap = math.inf
                leader_v = 0.0
            if not spawn_gap > threshold:
                continue
            speed = self._insertion_speed(spawn_gap, leader_v)
            if origin == RAMP:
                speed = min(speed, self.net.ramp_speed_limit)
            queue.pop()
            veh = Vehicle(vid=entry.vid, is_cav=entry.vclass == "cav",
                          road=origin, lane=lane_idx, x=0.0, v=speed,
                          headway=self.cfg.control.default_headway,
                          scheduled_s=entry.scheduled_s, entered_s=t_entry)
            lane.insert(0, veh)

    # -- main step ---------------------------------------------------------

    def step(self, command: Optional[np.ndarray] = None) -> None:
        cfg = self.cfg
        if command is not None:
            command = np.asarray(command, dtype=float)
            lo, hi = cfg.control.min_headway, cfg.control.max_headway
            if command.shape != self.current_command.shape:
                raise ValueError("command has wrong length")
            if np.any(command < lo - 1e-9) or np.any(command > hi + 1e-9):
                raise ValueError("command outside headway bounds")
            self.current_command = command

        apply_commands(self.active_vehicles(), self.net,
                       self.current_command, cfg.control.default_headway)
        merges = self._lane_changes()

        reward_raw = 0.0
        min_gap = math.inf
        for lane in self.main_lanes:
            r, g = self._advance_lane(lane, on_ramp=False)
            reward_raw += r
            min_gap = min(min_gap, g)
        r, g = self._advance_lane(self.ramp, on_ramp=True)
        reward_raw += r
        min_gap = min(min_gap, g)

        t_end = (self.step_idx + 1) * cfg.dt
        for lane in self.main_lanes:
            while lane and lane[-1].x >= self.net.mainline_length:
                veh = lane.pop()
                veh.exited_s = t_end
                self.exited.append(veh)

        queued = sum(q.waiting(self.step_idx) for q in self.queues.values())
        reward_raw += -1.0 * queued * cfg.dt

        self._insertions()

        obs = self.current_observation(time=t_end)
        self._rewards.append(cfg.reward_scale * reward_raw)
        self._speeds.append(obs.mean_speed)
        self._density.append(obs.density)
        self._commands.append(self.current_command.copy())
        self._queue_len.append(
            sum(q.waiting(self.step_idx) for q in self.queues.values()))
        self._active.append(len(self.active_vehicles()))
        self._exited.append(len(self.exited))
        self._min_gap.append(min_gap)
        self._merges.append(merges)
        self.step_idx += 1

    def run(self, controller=None) -> EpisodeRecord:
        cfg = self.cfg
        n_steps = round(cfg.sim_duration / cfg.dt)
        every = round(cfg.control.action_interval / cfg.dt)
        for k in range(n_steps):
            cmd = None
            if controller is not None and k % every == 0:
                hc = controller.act(self.time, self.current_observation(),
                                    self.active_vehicles(), self.net)
                cmd = np.asarray(hc.values, dtype=float)
            self.step(cmd)
        return self.finalize()

    def finalize(self) -> EpisodeRecord:
        cfg = self.cfg
        records = []
        seen: dict[str, Vehicle] = {}
        for veh in self.exited + self.active_vehicles():
            seen[veh.vid] = veh
        for e in self.schedule.entries:
            veh = seen.get(e.vid)
            if veh is None:
                records.append(VehicleRecord(
                    vid=e.vid, vclass=e.vclass, origin=e.origin, lane=e.lane,
                    scheduled_s=e.scheduled_s, entered_s=None, exited_s=None,
                    dist_main=0.0, dist_ramp=0.0,
                    reward_sum=self._never_inserted_penalty(e)))
            else:
                records.append(VehicleRecord(
                    vid=veh.vid, vclass=e.vclass, origin=e.origin,
                    lane=e.lane, scheduled_s=veh.scheduled_s,
                    entered_s=veh.entered_s, exited_s=veh.exited_s,
                    dist_main=veh.dist_main, dist_ramp=veh.dist_ramp,
                    reward_sum=veh.reward_sum + self._queue_penalty(veh)))
        return EpisodeRecord(
            seed=self.seed, dt=cfg.dt, n_steps=self.step_idx,
            cfg_fingerprint=cfg.fingerprint(),
            demand_fingerprint=self.schedule.fingerprint(),
            vehicles=records,
            rewards=np.array(self._rewards),
            mean_speed=np.array(self._speeds),
            density=np.array(self._density),
            commands=np.array(self._commands),
            queue_len=np.array(self._queue_len, dtype=int),
            active_count=np.array(self._active, dtype=int),
            exited_cum=np.array(self._exited, dtype=int),
            min_gap=np.array(self._min_gap),
            merges=np.array(self._merges, dtype=int))

    def _queue_penalty(self, veh: Vehicle) -> float:
        # Steps spent due-but-queued contribute (0 - v_free)/v_free = -1.
        entered_step = round(veh.entered_s / self.cfg.dt)
        due_step = round(veh.scheduled_s / self.cfg.dt)
        waited = max(0, (entered_step - 1) - due_step + 1)
        return -waited * self.cfg.dt

    def _never_inserted_penalty(self, e: DemandEntry) -> float:
        due_step = round(e.scheduled_s / self.cfg.dt)
        waited = max(0, self.step_idx - due_step)
        return -waited * self.cfg.dt


def run_episode(cfg: ScenarioConfig, controller=None, seed: int = 0,
                schedule: Optional[DemandSchedule] = None,
                insertion_hold_until: float = 0.0,
                speed_zone: Optional[SpeedZone] = None) -> EpisodeRecord:
    """Run one full episode and return its record.

    ``controller`` is polled every ``action_interval`` seconds; ``None``
    keeps the default headway everywhere (the human baseline).  Identical
    arguments produce bitwise-identical records.
    """
    sim = Simulation(cfg, schedule=schedule, seed=seed,
                     insertion_hold_until=insertion_hold_until,
                     speed_zone=speed_zone)
    return sim.run(controller)
