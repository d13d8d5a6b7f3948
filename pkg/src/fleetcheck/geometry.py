"""Robot footprints, oriented-rectangle shadows, collision test, hop timing.

A shadow is the robot's footprint grown by its safety margin, rotated to the
robot's heading and centred on its cell.  Collision is intersection (or
contact) of two shadows, decided by a separating-axis test on integer
coordinates.  Touching rectangles count as colliding: the margin already
encodes the tolerance.
"""

from dataclasses import dataclass
from typing import NamedTuple

from .errors import InvalidHop
from .fixedpoint import SCALE, SQRT2_X1E4, round_div
from .worldmodel import OccupancyGrid, WorldPoint, grid_to_world, precompute_trig


class DiscretePose(NamedTuple):
    rx: int
    ry: int
    rdir: int  # 0..7, heading = rdir * 45 degrees


# Unit cell step for each of the 8 headings (45-degree increments).
DIR_STEPS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
STEP_TO_DIR = {step: d for d, step in enumerate(DIR_STEPS)}


@dataclass(frozen=True)
class Footprint:
    length_mm: int
    width_mm: int
    safety_margin_mm: int = 0

    def __post_init__(self):
        if self.length_mm <= 0 or self.width_mm <= 0:
            raise ValueError("footprint dimensions must be positive")
        if self.safety_margin_mm < 0:
            raise ValueError("safety margin must be non-negative")


class Shadow(NamedTuple):
    """Four corners of an oriented rectangle, consistent winding order."""

    corners: tuple  # 4x WorldPoint


_CORNER_SIGNS = ((1, 1), (-1, 1), (-1, -1), (1, -1))


def shadow_of(pose: DiscretePose, fp: Footprint, grid: OccupancyGrid) -> Shadow:
    """Oriented bounding rectangle of a robot at `pose`, margin included."""
    center, heading = grid_to_world(pose, grid)
    trig = precompute_trig()
    c, s = trig.cos_x1e4[heading], trig.sin_x1e4[heading]
    length = fp.length_mm + 2 * fp.safety_margin_mm
    width = fp.width_mm + 2 * fp.safety_margin_mm
    corners = []
    for sl, sw in _CORNER_SIGNS:
        # (sl*L/2, sw*W/2) rotated by the heading, one rounding per coordinate
        ox = round_div(sl * length * c - sw * width * s, 2 * SCALE)
        oy = round_div(sl * length * s + sw * width * c, 2 * SCALE)
        corners.append(WorldPoint(center.x_mm + ox, center.y_mm + oy))
    return Shadow(tuple(corners))


def _project(corners, ax: int, ay: int):
    dots = [p.x_mm * ax + p.y_mm * ay for p in corners]
    return min(dots), max(dots)


def shadows_intersect(a: Shadow, b: Shadow) -> bool:
    """Separating-axis test over the 4 unique edge normals; touching counts."""
    ca, cb = a.corners, b.corners
    axes = (
        (ca[1].x_mm - ca[0].x_mm, ca[1].y_mm - ca[0].y_mm),
        (ca[2].x_mm - ca[1].x_mm, ca[2].y_mm - ca[1].y_mm),
        (cb[1].x_mm - cb[0].x_mm, cb[1].y_mm - cb[0].y_mm),
        (cb[2].x_mm - cb[1].x_mm, cb[2].y_mm - cb[1].y_mm),
    )
    for ax, ay in axes:
        if ax == 0 and ay == 0:
            continue
        amin, amax = _project(ca, ax, ay)
        bmin, bmax = _project(cb, ax, ay)
        if amax < bmin or bmax < amin:
            return False
    return True


def check_collision(
    pose_a: DiscretePose,
    fp_a: Footprint,
    pose_b: DiscretePose,
    fp_b: Footprint,
    grid: OccupancyGrid,
) -> bool:
    return shadows_intersect(shadow_of(pose_a, fp_a, grid), shadow_of(pose_b, fp_b, grid))


def point_in_shadow(x_mm: int, y_mm: int, sh: Shadow) -> bool:
    """Inclusive point-in-oriented-rectangle test (integer arithmetic)."""
    c0, c1, _, c3 = sh.corners
    vx, vy = x_mm - c0.x_mm, y_mm - c0.y_mm
    e1x, e1y = c1.x_mm - c0.x_mm, c1.y_mm - c0.y_mm
    e2x, e2y = c3.x_mm - c0.x_mm, c3.y_mm - c0.y_mm
    d1 = vx * e1x + vy * e1y
    d2 = vx * e2x + vy * e2y
    return 0 <= d1 <= e1x * e1x + e1y * e1y and 0 <= d2 <= e2x * e2x + e2y * e2y


def move_duration_ms(
    frm: DiscretePose, to: DiscretePose, speed_mm_s: int, grid: OccupancyGrid
) -> int:
    """Time for one hop to an 8-adjacent cell; diagonal uses fixed-point sqrt2."""
    dx, dy = abs(to.rx - frm.rx), abs(to.ry - frm.ry)
    if dx > 1 or dy > 1 or (dx == 0 and dy == 0):
        raise InvalidHop(f"{(frm.rx, frm.ry)} -> {(to.rx, to.ry)} is not an adjacent hop")
    w = grid.cell_width_mm
    if dx and dy:
        dur = round_div(w * SQRT2_X1E4, 10 * speed_mm_s)
    else:
        dur = round_div(w * 1000, speed_mm_s)
    return max(1, dur)


def rotate_duration_ms(from_dir: int, to_dir: int, angular_speed_deg_s: int) -> int:
    """Time to turn the shorter way between two of the 8 headings."""
    diff = (to_dir - from_dir) % 8
    steps = min(diff, 8 - diff)
    if steps == 0:
        return 0
    return round_div(steps * 45 * 1000, angular_speed_deg_s)


def octile_distance_mm(a_cell, b_cell, cell_width_mm: int) -> int:
    """Shortest 8-connected travel distance between two cell centres, in mm."""
    dx, dy = abs(a_cell[0] - b_cell[0]), abs(a_cell[1] - b_cell[1])
    lo, hi = min(dx, dy), max(dx, dy)
    return (hi - lo) * cell_width_mm + round_div(lo * cell_width_mm * SQRT2_X1E4, SCALE)
