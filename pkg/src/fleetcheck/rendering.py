"""ASCII and PGM frame rendering of scenario states and traces."""

from typing import Optional

from .checker import replay_iter
from .errors import ReplayDivergence
from .scenario import Scenario

WALL = "#"
FREE = "."
GOAL = "*"
COLLIDE = "X"


def _robot_symbol(rid: str, index: int) -> str:
    if rid and rid[-1].isdigit():
        return rid[-1]
    return str((index + 1) % 10)


def render_frame(scenario: Scenario, poses: dict, colliding=()) -> str:
    """One ASCII frame: '#' walls, '.' free, digits robots, '*' goals, 'X' collisions."""
    grid = scenario.grid
    rows = [
        [WALL if grid.is_occupied(x, y) else FREE for x in range(grid.width_cells)]
        for y in range(grid.height_cells)
    ]
    for rid, p in scenario.params.items():
        gx, gy = p.goal
        if rows[gy][gx] == FREE:
            rows[gy][gx] = GOAL
    for i, rid in enumerate(sorted(poses)):
        pose = poses[rid]
        rows[pose.ry][pose.rx] = COLLIDE if rid in colliding else _robot_symbol(rid, i)
    return "\n".join("".join(r) for r in rows) + "\n"


def render_pgm_frame(scenario: Scenario, poses: dict, colliding=()) -> bytes:
    """Grayscale frame: walls 0, free 255, goals 208, robots 96, collisions 32."""
    grid = scenario.grid
    vals = [[0 if grid.is_occupied(x, y) else 255 for x in range(grid.width_cells)]
            for y in range(grid.height_cells)]
    for p in scenario.params.values():
        gx, gy = p.goal
        if vals[gy][gx] == 255:
            vals[gy][gx] = 208
    for rid in sorted(poses):
        pose = poses[rid]
        vals[pose.ry][pose.rx] = 32 if rid in colliding else 96
    lines = [b"P2", f"{grid.width_cells} {grid.height_cells}".encode(), b"255"]
    lines += [" ".join(str(v) for v in row).encode() for row in vals]
    return b"\n".join(lines) + b"\n"


def frames_at_times(scenario: Scenario, ctx, init, trace: list, times: list):
    """Replay a trace and capture the world at each requested model time.

    Returns a list of dicts {time_ms, requested_ms, text, notice} in the order
    requested.  A request beyond the trace yields the final state plus a
    notice.  Raises ReplayDivergence when the trace does not match.
    """
    requested = list(times)
    remaining = sorted(set(requested))
    snapshots = {}  # requested time -> (clock, poses, colliding)

    def capture(state):
        colliding = set(state.mapserver.colliding or ())
        return state.clock, dict(state.mapserver.poses), colliding

    last = capture(init)
    end_of_trace = None
    for rec, state in replay_iter(ctx, init, trace):
        now = rec["time_ms"]
        while remaining and remaining[0] < now:
            snapshots[remaining.pop(0)] = (last, None)
        last = capture(state)
        end_of_trace = last
    final = end_of_trace if end_of_trace is not None else last
    while remaining:
        t = remaining.pop(0)
        if t > final[0]:
            snapshots[t] = (final, f"time {t} ms beyond end of trace ({final[0]} ms); last state shown")
        else:
            snapshots[t] = (final, None)

    frames = []
    for t in requested:
        (clock, poses, colliding), notice = snapshots[t]
        frames.append(
            {
                "requested_ms": t,
                "time_ms": clock,
                "text": render_frame(scenario, poses, colliding),
                "poses": {rid: list(p) for rid, p in sorted(poses.items())},
                "notice": notice,
            }
        )
    return frames
