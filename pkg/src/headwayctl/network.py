"""Road geometry: segment partition of the merge network.

The mainline is cut into near-uniform segments (target length from the
scenario config, actual length within [90, 110] m); one extra segment covers
the merge ramp.  Controlled segments are the mainline segments whose
downstream boundary sits nearest the merge point, counted upstream.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ScenarioConfig

__all__ = ["SegmentSpec", "RoadNetwork", "build_merge_network"]


@dataclass(frozen=True)
class SegmentSpec:
    index: int
    start: float
    end: float
    is_ramp: bool
    is_controlled: bool

    @property
    def length(self) -> float:
        return self.end - self.start


class RoadNetwork:
    """Static geometry shared by sensing, control, and the engine."""

    def __init__(self, cfg: ScenarioConfig):
        cfg.geometry.validate()
        g = cfg.geometry
        n = max(1, round(g.mainline_length / g.segment_length))
        seg_len = g.mainline_length / n
        if not 90.0 <= seg_len <= 110.0:
            raise ValueError(
                f"mainline segments would be {seg_len:.1f} m long; "
                "lengths must fall in [90, 110] m")

        upstream = [i for i in range(n)
                    if (i + 1) * seg_len <= g.merge_position + 1e-9]
        k = cfg.control.num_control_segments
        if len(upstream) < k:
            raise ValueError(
                "merge_position leaves fewer whole upstream segments "
                f"({len(upstream)}) than num_control_segments ({k})")
        controlled = set(upstream[-k:])

        segments = [
            SegmentSpec(index=i, start=i * seg_len, end=(i + 1) * seg_len,
                        is_ramp=False, is_controlled=(i in controlled))
            for i in range(n)
        ]
        segments.append(SegmentSpec(index=n, start=0.0, end=g.ramp_length,
                                    is_ramp=True, is_controlled=False))

        self.cfg = cfg
        self.mainline_length = g.mainline_length
        self.mainline_lanes = g.mainline_lanes
        self.ramp_length = g.ramp_length
        self.merge_position = g.merge_position
        self.merge_zone_length = g.merge_zone_length
        self.segments = tuple(segments)
        self.num_mainline_segments = n
        self.controlled_segments = tuple(sorted(controlled))
        self._seg_len = seg_len
        self.speed_limit = g.speed_limit
        self.ramp_speed_limit = cfg.ramp_speed_limit

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    @property
    def ramp_segment(self) -> int:
        return self.num_mainline_segments

    def segment_of(self, x: float, on_ramp: bool = False) -> int:
        """Segment index for position ``x``; boundaries belong to the
        downstream segment, and the terminal boundary closes the last one."""
        if on_ramp:
            if not 0.0 <= x <= self.ramp_length:
                raise ValueError(f"ramp position {x} outside [0, ramp_length]")
            return self.ramp_segment
        if not 0.0 <= x <= self.mainline_length:
            raise ValueError(f"position {x} outside [0, mainline_length]")
        idx = int(x / self._seg_len)
        return min(idx, self.num_mainline_segments - 1)

    def merge_zone_start_ramp(self) -> float:
        """Ramp coordinate where the parallel merge stretch begins."""
        return self.ramp_length - self.merge_zone_length

    def ramp_to_mainline(self, r: float) -> float:
        """Mainline coordinate running alongside ramp position ``r``."""
        return self.merge_position - (self.ramp_length - r)

    def free_speed_at(self, on_ramp: bool) -> float:
        return self.ramp_speed_limit if on_ramp else self.speed_limit

    def lanes_of_segment(self, index: int) -> int:
        return 1 if self.segments[index].is_ramp else self.mainline_lanes


def build_merge_network(cfg: ScenarioConfig) -> RoadNetwork:
    """Construct the segmented merge network for a validated scenario."""
    cfg.validate()
    return RoadNetwork(cfg)
