"""A* pathfinding on the inflated 8-connected grid, plus path post-processing.

Costs are integral (10 per edge hop, 14 per diagonal) so search and
tie-breaking are fully deterministic.  Diagonal moves may not cut corners:
both adjacent edge cells must be free.  Paths exclude the start cell; the
start is kept on the Path object because the post-optimizations need the
direction of the first segment.
"""

import heapq
from dataclasses import dataclass

from .errors import InvalidEndpoint, NoPath
from .fixedpoint import round_div
from .geometry import DIR_STEPS, Footprint
from .worldmodel import FREE, OCCUPIED, OccupancyGrid

EDGE_COST = 10
DIAG_COST = 14


@dataclass(frozen=True)
class Path:
    """Waypoints from just after `start` up to and including the goal."""

    start: tuple  # (rx, ry)
    waypoints: tuple  # ((rx, ry), ...)

    @property
    def goal(self):
        return self.waypoints[-1] if self.waypoints else self.start


def inflate_grid(grid: OccupancyGrid, fp: Footprint) -> OccupancyGrid:
    """Grow obstacles by the robot's half-extent plus margin (Chebyshev)."""
    reach = max(fp.length_mm, fp.width_mm) + 2 * fp.safety_margin_mm  # 2x radius
    radius = (reach + 2 * grid.cell_width_mm - 1) // (2 * grid.cell_width_mm)
    if radius == 0 or grid.occupied_count() == 0:
        return grid
    w, h = grid.width_cells, grid.height_cells
    out = bytearray(grid.cells)
    for ry in range(h):
        base = ry * w
        for rx in range(w):
            if grid.cells[base + rx] == OCCUPIED:
                for ny in range(max(0, ry - radius), min(h, ry + radius + 1)):
                    row = ny * w
                    lo, hi = max(0, rx - radius), min(w, rx + radius + 1)
                    out[row + lo : row + hi] = b"\x01" * (hi - lo)
    return OccupancyGrid(w, h, grid.cell_width_mm, bytes(out))


def octile_heuristic(a, b) -> int:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return DIAG_COST * min(dx, dy) + EDGE_COST * abs(dx - dy)


def generate_path(inflated: OccupancyGrid, start, goal) -> Path:
    """Optimal-cost A* path over 8-connected moves on the inflated grid.

    Tie-breaking is deterministic: among equal f, pop lowest h, then lowest
    (ry, rx).  Raises NoPath / InvalidEndpoint.
    """
    start, goal = tuple(start), tuple(goal)
    for name, cell in (("start", start), ("goal", goal)):
        if not inflated.in_bounds(*cell):
            raise InvalidEndpoint(f"{name} {cell} outside grid")
        if inflated.is_occupied(*cell):
            raise InvalidEndpoint(f"{name} {cell} occupied on inflated grid")
    if start == goal:
        return Path(start, ())
    free = inflated.cells
    w, h = inflated.width_cells, inflated.height_cells
    g = {start: 0}
    parent = {}
    open_heap = [(octile_heuristic(start, goal), octile_heuristic(start, goal), start[1], start[0])]
    closed = set()
    while open_heap:
        f, hh, ry, rx = heapq.heappop(open_heap)
        cur = (rx, ry)
        if cur in closed:
            continue
        if cur == goal:
            cells = [cur]
            while cur != start:
                cur = parent[cur]
                cells.append(cur)
            cells.reverse()
            return Path(start, tuple(cells[1:]))
        closed.add(cur)
        gc = g[cur]
        for dx, dy in DIR_STEPS:
            nx, ny = rx + dx, ry + dy
            if not (0 <= nx < w and 0 <= ny < h) or free[ny * w + nx] != FREE:
                continue
            if dx and dy:
                # no corner cutting: both edge-adjacent cells must be free
                if free[ry * w + nx] != FREE or free[ny * w + rx] != FREE:
                    continue
                cost = DIAG_COST
            else:
                cost = EDGE_COST
            nxt = (nx, ny)
            ng = gc + cost
            if nxt not in g or ng < g[nxt]:
                g[nxt] = ng
                parent[nxt] = cur
                nh = octile_heuristic(nxt, goal)
                heapq.heappush(open_heap, (ng + nh, nh, ny, nx))
    raise NoPath(f"no route from {start} to {goal}")


def path_cost(p: Path) -> int:
    """Octile cost (10/14 units) of the expanded cell walk."""
    cells = walk_cells(p)
    cost = 0
    for (ax, ay), (bx, by) in zip(cells, cells[1:]):
        cost += DIAG_COST if ax != bx and ay != by else EDGE_COST
    return cost


def walk_cells(p: Path):
    """Expand a path into the full unit-step cell sequence, start included.

    Each consecutive waypoint pair must lie on a straight 8-direction run.
    """
    cells = [p.start]
    for wp in p.waypoints:
        cx, cy = cells[-1]
        dx, dy = wp[0] - cx, wp[1] - cy
        if not (dx == 0 or dy == 0 or abs(dx) == abs(dy)) or (dx == 0 and dy == 0):
            raise ValueError(f"waypoint {wp} not on a straight run from {(cx, cy)}")
        sx = (dx > 0) - (dx < 0)
        sy = (dy > 0) - (dy < 0)
        for _ in range(max(abs(dx), abs(dy))):
            cx, cy = cx + sx, cy + sy
            cells.append((cx, cy))
    return cells


def _recompress(cells) -> tuple:
    """Waypoints at every direction change plus the final cell."""
    if len(cells) < 2:
        return ()
    out = []
    prev_dir = None
    for a, b in zip(cells, cells[1:]):
        d = (b[0] - a[0], b[1] - a[1])
        if prev_dir is not None and d != prev_dir:
            out.append(a)
        prev_dir = d
    out.append(cells[-1])
    return tuple(out)


def consolidate_waypoints(p: Path) -> Path:
    """Collapse maximal collinear runs to their endpoints (idempotent)."""
    return Path(p.start, _recompress(walk_cells(p)))


def eliminate_zigzag(p: Path, inflated: OccupancyGrid) -> Path:
    """Replace perpendicular edge-step pairs with single diagonal hops.

    A staircase pair is merged only when the cut corner cell is free on the
    inflated grid, mirroring the planner's no-corner-cutting rule, so the
    result stays walkable and never costs more.
    """
    cells = walk_cells(p)
    free = inflated.cells
    w = inflated.width_cells

    def cell_free(c):
        return inflated.in_bounds(*c) and free[c[1] * w + c[0]] == FREE

    changed = True
    while changed:
        changed = False
        out = [cells[0]]
        i = 0
        while i < len(cells) - 1:
            if i + 2 < len(cells):
                a, b, c = cells[i], cells[i + 1], cells[i + 2]
                d1 = (b[0] - a[0], b[1] - a[1])
                d2 = (c[0] - b[0], c[1] - b[1])
                if (
                    abs(d1[0]) + abs(d1[1]) == 1
                    and abs(d2[0]) + abs(d2[1]) == 1
                    and d1[0] * d2[0] + d1[1] * d2[1] == 0
                ):
                    # b is one adjacent edge cell of the diagonal; check the other
                    other_corner = (a[0] + d2[0], a[1] + d2[1])
                    if cell_free(other_corner):
                        out.append(c)
                        i += 2
                        changed = True
                        continue
            out.append(cells[i + 1])
            i += 1
        cells = out
    return Path(p.start, _recompress(cells))
