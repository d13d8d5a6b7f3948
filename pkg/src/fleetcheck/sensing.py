"""Simulated LIDAR over the occupancy grid plus other robots' shadows.

Rays are marched in increments of a quarter cell, testing occupancy at each
step; the quarter-cell step guarantees no occupied cell can be skipped.  The
map boundary is treated as an obstacle so rays (and therefore robots) never
see free space outside the grid.  Angles are integer degrees and beams lie at
multiples of the beam step within the field of view around the scan-time
heading (inclusive start, exclusive end).
"""

import bisect
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DirectionNotScanned, OutOfBounds
from .fixedpoint import SCALE, round_div, round_div_arr
from .geometry import DiscretePose, Footprint, Shadow, point_in_shadow
from .worldmodel import OccupancyGrid, WorldPoint, grid_to_world, precompute_trig


@dataclass(frozen=True)
class ObstacleMatrix:
    """Per-beam nearest-obstacle distances from one scan.

    `entries` maps absolute beam angles (degrees, sorted) to hit distances in
    mm; a distance equal to `max_range_mm` means the beam was clear.
    """

    beam_step_deg: int
    fov_deg: int
    max_range_mm: int
    scan_time_ms: int
    entries: tuple  # ((angle_deg, distance_mm), ...) sorted by angle

    @cached_property
    def _angles(self):
        return [a for a, _ in self.entries]

    def distance_at(self, angle_deg: int):
        i = bisect.bisect_left(self._angles, angle_deg % 360)
        if i < len(self.entries) and self.entries[i][0] == angle_deg % 360:
            return self.entries[i][1]
        return None

    def min_distance(self) -> int:
        return min((d for _, d in self.entries), default=self.max_range_mm)


def march_step_mm(grid: OccupancyGrid) -> int:
    return max(1, round_div(grid.cell_width_mm, 4))


def ray_cast(
    grid: OccupancyGrid,
    origin: WorldPoint,
    angle_deg: int,
    others=(),
    max_range_mm: int = 10_000,
) -> int:
    """Distance to the first occupied cell / robot shadow / map edge along a ray.

    Returns max_range_mm when nothing is hit.  The test point at distance 0 is
    excluded so the caster's own cell never blocks the ray.
    """
    w = grid.cell_width_mm
    if not (0 <= origin.x_mm < grid.width_cells * w and 0 <= origin.y_mm < grid.height_cells * w):
        raise OutOfBounds(f"ray origin {origin} outside grid")
    trig = precompute_trig()
    c, s = trig.cos_x1e4[angle_deg % 360], trig.sin_x1e4[angle_deg % 360]
    step = march_step_mm(grid)
    k = 1
    while True:
        dist = k * step
        if dist > max_range_mm:
            return max_range_mm
        px = origin.x_mm + round_div(dist * c, SCALE)
        py = origin.y_mm + round_div(dist * s, SCALE)
        rx, ry = px // w, py // w
        if not grid.in_bounds(rx, ry) or grid.is_occupied(rx, ry):
            return dist
        if any(point_in_shadow(px, py, sh) for sh in others):
            return dist
        k += 1


def beam_angles(heading_deg: int, fov_deg: int, beam_step_deg: int):
    """Beam set: heading - fov/2 inclusive through heading + fov/2 exclusive."""
    n = fov_deg // beam_step_deg
    start = heading_deg - fov_deg // 2
    return [(start + i * beam_step_deg) % 360 for i in range(n)]


def scan_obstacles(
    grid: OccupancyGrid,
    pose: DiscretePose,
    others=(),
    *,
    fov_deg: int = 360,
    beam_step_deg: int = 2,
    max_range_mm: int = 10_000,
    scan_time_ms: int = 0,
) -> ObstacleMatrix:
    """One ray cast per beam angle around the current heading.

    `others` are the other robots' shadows; the caller excludes the scanning
    robot itself.  All beams are marched together with numpy; results are
    identical to per-beam ray_cast (integer arithmetic throughout).
    """
    if fov_deg % beam_step_deg != 0:
        raise ValueError("fov_deg must be a multiple of beam_step_deg")
    center, heading = grid_to_world(pose, grid)
    angles = beam_angles(heading, fov_deg, beam_step_deg)
    dists = _march_all(grid, center, angles, others, max_range_mm)
    entries = tuple(sorted(zip(angles, dists)))
    return ObstacleMatrix(beam_step_deg, fov_deg, max_range_mm, scan_time_ms, entries)


def _march_all(grid, origin, angles, others, max_range_mm):
    trig = precompute_trig()
    w = grid.cell_width_mm
    step = march_step_mm(grid)
    nsteps = max_range_mm // step
    if nsteps == 0:
        return [max_range_mm] * len(angles)
    dists = (np.arange(1, nsteps + 1, dtype=np.int64) * step)[:, None]  # (S, 1)
    cosv = np.array([trig.cos_x1e4[a] for a in angles], dtype=np.int64)  # (B,)
    sinv = np.array([trig.sin_x1e4[a] for a in angles], dtype=np.int64)
    px = origin.x_mm + round_div_arr(dists * cosv, SCALE)  # (S, B)
    py = origin.y_mm + round_div_arr(dists * sinv, SCALE)
    rx, ry = px // w, py // w
    inside = (rx >= 0) & (rx < grid.width_cells) & (ry >= 0) & (ry < grid.height_cells)
    occ = grid.occ_array[ry.clip(0, grid.height_cells - 1), rx.clip(0, grid.width_cells - 1)]
    hit = occ | ~inside
    for sh in others:
        c0, c1, _, c3 = sh.corners
        vx, vy = px - c0.x_mm, py - c0.y_mm
        e1x, e1y = c1.x_mm - c0.x_mm, c1.y_mm - c0.y_mm
        e2x, e2y = c3.x_mm - c0.x_mm, c3.y_mm - c0.y_mm
        d1 = vx * e1x + vy * e1y
        d2 = vx * e2x + vy * e2y
        hit |= (d1 >= 0) & (d1 <= e1x * e1x + e1y * e1y) & (d2 >= 0) & (d2 <= e2x * e2x + e2y * e2y)
    first = np.argmax(hit, axis=0)
    any_hit = hit[first, np.arange(hit.shape[1])]
    out = np.where(any_hit, (first + 1) * step, max_range_mm)
    return [int(v) for v in out]


def nearest_blocking_distance(m: ObstacleMatrix, heading_dir: int, fp: Footprint) -> int:
    """Distance to the nearest obstacle inside the frontal corridor.

    A beam blocks when its hit point lies within half the robot width (plus
    margin) of the heading axis and no further back than the robot itself;
    everything else is non-blocking regardless of proximity.
    """
    heading = heading_dir * 45
    if m.fov_deg < 360:
        covered = any(abs(_rel_angle(a, heading)) <= m.beam_step_deg for a, _ in m.entries)
        if not covered:
            raise DirectionNotScanned(f"heading {heading} outside scanned field of view")
    trig = precompute_trig()
    half_width = round_div(fp.width_mm, 2) + fp.safety_margin_mm
    best = m.max_range_mm
    for angle, dist in m.entries:
        if dist >= m.max_range_mm:
            continue
        rel = _rel_angle(angle, heading)
        if abs(rel) > 90:
            continue
        lateral = round_div(dist * trig.sin_x1e4[abs(rel)], SCALE)
        if lateral <= half_width:
            best = min(best, dist)
    return best


def _rel_angle(angle_deg: int, heading_deg: int) -> int:
    """Signed relative angle in (-180, 180]."""
    rel = (angle_deg - heading_deg) % 360
    return rel - 360 if rel > 180 else rel
