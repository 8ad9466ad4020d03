"""Segment-level traffic observation.

Aggregates vehicle positions and speeds into per-segment mean speed and
density.  Accumulation happens in a sorted order so the result is exactly
invariant to the ordering of the input vehicles, and vehicle counts are
recoverable from the densities without rounding surprises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import RoadNetwork

__all__ = ["SegmentObservation", "observe"]


@dataclass(frozen=True)
class SegmentObservation:
    """Mean speed (m/s) and density (veh/km/lane) per segment at one instant.

    Empty segments report the posted speed limit, mirroring a detector that
    assumes free flow when it sees nobody.
    """

    time: float
    mean_speed: np.ndarray
    density: np.ndarray

    def as_policy_vector(self, speed_norm: float, jam_density: float
                         ) -> np.ndarray:
        """Flat observation: speeds scaled by the limit, then densities
        scaled by jam density.  Length is twice the segment count."""
        return np.concatenate([self.mean_speed / speed_norm,
                               self.density / jam_density])

    def vehicle_counts(self, net: RoadNetwork) -> np.ndarray:
        lanes = np.array([net.lanes_of_segment(i)
                          for i in range(net.num_segments)], dtype=float)
        lengths_km = np.array([s.length for s in net.segments]) / 1000.0
        return np.rint(self.density * lengths_km * lanes).astype(int)


def observe(net: RoadNetwork, segment_idx: np.ndarray, speeds: np.ndarray,
            time: float) -> SegmentObservation:
    """Bin vehicles (already mapped to segment indices) into an observation.

    ``segment_idx`` and ``speeds`` are parallel arrays, one entry per active
    vehicle; queued vehicles are not detectable and must not be included.
    """
    n = net.num_segments
    segment_idx = np.asarray(segment_idx, dtype=int)
    speeds = np.asarray(speeds, dtype=float)
    if segment_idx.shape != speeds.shape:
        raise ValueError("segment_idx and speeds must have equal shapes")
    if segment_idx.size and (segment_idx.min() < 0 or segment_idx.max() >= n):
        raise ValueError("segment index out of range")

    # Sort by (segment, speed) so float accumulation order is canonical.
    if segment_idx.size:
        order = np.lexsort((speeds, segment_idx))
        segment_idx = segment_idx[order]
        speeds = speeds[order]
    counts = np.bincount(segment_idx, minlength=n).astype(float)
    speed_sums = np.bincount(segment_idx, weights=speeds, minlength=n)

    mean_speed = np.empty(n, dtype=float)
    density = np.empty(n, dtype=float)
    for i, seg in enumerate(net.segments):
        lanes = net.lanes_of_segment(i)
        if counts[i] > 0:
            mean_speed[i] = speed_sums[i] / counts[i]
        else:
            mean_speed[i] = net.free_speed_at(seg.is_ramp)
        density[i] = counts[i] / (seg.length / 1000.0) / lanes
    return SegmentObservation(time=time, mean_speed=mean_speed,
                              density=density)
