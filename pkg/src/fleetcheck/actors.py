"""Timed-actor kernel and the two actor roles: robots and the map server.

Actors own their state and interact only through timed messages; each message
is executed run-to-completion.  The kernel always executes a message with the
minimal arrival time.  Several messages arriving at the same instant are a
nondeterministic choice point: the checker branches over all of them, the
simulator picks the lowest (actor id, seq).

A robot repeats a look-think-act loop (updateMovingStatus): it turns toward
the next waypoint one 45-degree increment at a time, estimates the free
distance ahead from its latest scan, hops one cell when that distance exceeds
its stop zone, and otherwise waits.  Waiting past its patience threshold
triggers the congestion resolver: retreat a random number of cells along one
of the three rear directions with the most free space, then request a fresh
route.  The map server tracks reported robot poses, serves scans and routes,
and raises the collision flag whenever two reported shadows intersect.
"""

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from .errors import DirectionNotScanned, ModelError
from .geometry import (
    DIR_STEPS,
    STEP_TO_DIR,
    DiscretePose,
    Footprint,
    move_duration_ms,
    octile_distance_mm,
    rotate_duration_ms,
    shadow_of,
    shadows_intersect,
)
from .planner import consolidate_waypoints, eliminate_zigzag, generate_path
from .errors import InvalidEndpoint, NoPath
from .sensing import ObstacleMatrix, nearest_blocking_distance, scan_obstacles
from .worldmodel import OccupancyGrid

MAP_SERVER_ID = "mapserver"

ROBOT_SERVERS = ("doLaserScan", "onLaserScan", "onNewPath", "updateMovingStatus")
MAP_SERVERS = ("scanObstacles", "generatePath", "updateRobotLocation")


class Status(enum.IntEnum):
    IDLE = 0
    ROTATING = 1
    MOVING = 2
    WAITING = 3
    BACKING_OFF = 4
    ARRIVED = 5
    STUCK = 6


class Message(NamedTuple):
    seq: int
    target: str
    server: str
    args: tuple
    arrival_ms: int
    deadline_ms: Optional[int]


class NeedChoice(Exception):
    """Raised by RecordingChooser when the prescribed prefix runs out."""

    def __init__(self, num_options: int):
        super().__init__(num_options)
        self.num_options = num_options


class RecordingChooser:
    """Replays a prescribed choice prefix; used to enumerate branches."""

    def __init__(self, prefix=()):
        self.prefix = tuple(prefix)
        self.taken = []

    def choose(self, num_options: int) -> int:
        if len(self.taken) < len(self.prefix):
            pick = self.prefix[len(self.taken)]
        else:
            raise NeedChoice(num_options)
        self.taken.append(pick)
        return pick


class RandomChooser:
    """Resolves choices with a seeded PRNG; records picks for the trace."""

    def __init__(self, rng):
        self.rng = rng
        self.taken = []

    def choose(self, num_options: int) -> int:
        pick = self.rng.randrange(num_options)
        self.taken.append(pick)
        return pick


@dataclass(frozen=True)
class RobotParams:
    """Per-robot configuration; static for the whole run."""

    id: str
    goal: tuple
    fp: Footprint
    speed_mm_s: int
    angular_speed_deg_s: int
    scan_period_ms: int
    fov_deg: int
    beam_step_deg: int
    max_range_mm: int
    stop_zone_mm: int
    wait_increment_ms: int
    max_wait_ms: int
    max_reroutes: int
    arrival_tolerance_mm: int


@dataclass
class RobotState:
    pose: DiscretePose
    distance2target_mm: int
    status: Status = Status.IDLE
    path: tuple = ()
    matrix: Optional[ObstacleMatrix] = None
    wait_count_ms: int = 0
    reroute_count: int = 0
    path_pending: bool = False
    back_dir: Optional[int] = None
    back_steps: int = 0


@dataclass
class MapServerState:
    poses: dict  # robot id -> DiscretePose
    collision_flag: bool = False
    colliding: Optional[tuple] = None


@dataclass
class ModelState:
    clock: int
    robots: dict  # robot id -> RobotState
    mapserver: MapServerState
    pending: list  # of Message
    next_seq: int


def copy_state(s: ModelState) -> ModelState:
    """Cheap deep-enough copy: robot fields are immutable values."""
    return ModelState(
        clock=s.clock,
        robots={rid: replace(r) for rid, r in s.robots.items()},
        mapserver=MapServerState(dict(s.mapserver.poses), s.mapserver.collision_flag, s.mapserver.colliding),
        pending=list(s.pending),
        next_seq=s.next_seq,
    )


@dataclass
class EngineContext:
    """Immutable world data plus memo caches shared by every run/branch."""

    grid: OccupancyGrid
    robots: dict  # robot id -> RobotParams
    inflated: dict  # robot id -> OccupancyGrid (per footprint)
    service_latency_ms: int = 0
    scan_cache: dict = field(default_factory=dict)
    plan_cache: dict = field(default_factory=dict)
    shadow_cache: dict = field(default_factory=dict)

    def shadow(self, pose: DiscretePose, rid: str):
        key = (pose, rid)
        sh = self.shadow_cache.get(key)
        if sh is None:
            sh = shadow_of(pose, self.robots[rid].fp, self.grid)
            self.shadow_cache[key] = sh
        return sh


def actor_sort_key(msg: Message):
    """Deterministic tie order: lowest actor id, then send order."""
    return (msg.target, msg.seq)


class Engine:
    """Executes messages against a ModelState under a fixed EngineContext."""

    def __init__(self, ctx: EngineContext):
        self.ctx = ctx

    # -- kernel ----------------------------------------------------------

    def ready_messages(self, state: ModelState):
        if not state.pending:
            return []
        t = min(m.arrival_ms for m in state.pending)
        return sorted((m for m in state.pending if m.arrival_ms == t), key=actor_sort_key)

    def execute(self, state: ModelState, seq: int, chooser) -> Message:
        """Run one message to completion (or drop it past its deadline)."""
        msg = None
        for i, m in enumerate(state.pending):
            if m.seq == seq:
                msg = state.pending.pop(i)
                break
        if msg is None:
            raise ModelError(f"no pending message with seq {seq}")
        state.clock = msg.arrival_ms
        if msg.deadline_ms is not None and msg.arrival_ms > msg.deadline_ms:
            return msg  # expired: dropped without executing the server
        if msg.target == MAP_SERVER_ID:
            handler = self._MAP_DISPATCH.get(msg.server)
        else:
            if msg.target not in state.robots:
                raise ModelError(f"unknown actor {msg.target!r}")
            handler = self._ROBOT_DISPATCH.get(msg.server)
        if handler is None:
            raise ModelError(f"unknown message server {msg.server!r} for {msg.target!r}")
        handler(self, state, msg.target, msg.args, chooser)
        return msg

    def _send(self, state, target, server, args=(), after=0, deadline=None):
        state.pending.append(
            Message(state.next_seq, target, server, tuple(args), state.clock + after, deadline)
        )
        state.next_seq += 1

    # -- robot servers ----------------------------------------------------

    def _do_laser_scan(self, state, rid, args, chooser):
        r = state.robots[rid]
        self._send(state, MAP_SERVER_ID, "scanObstacles", (rid, r.pose), after=self.ctx.service_latency_ms)

    def _on_laser_scan(self, state, rid, args, chooser):
        (matrix,) = args
        r = state.robots[rid]
        r.matrix = matrix
        if r.status not in (Status.ARRIVED, Status.STUCK):
            self._send(state, rid, "doLaserScan", after=self.ctx.robots[rid].scan_period_ms)

    def _on_new_path(self, state, rid, args, chooser):
        (waypoints,) = args
        r = state.robots[rid]
        p = self.ctx.robots[rid]
        r.path_pending = False
        r.path = tuple(waypoints)
        if r.path:
            self._send(state, rid, "updateMovingStatus", after=0)
            return
        if r.distance2target_mm <= p.arrival_tolerance_mm:
            r.status = Status.ARRIVED
            return
        # no route right now: wait, and escalate to the congestion resolver
        r.status = Status.WAITING
        r.wait_count_ms += p.wait_increment_ms
        if r.wait_count_ms > p.max_wait_ms:
            self._resolve_congestion(state, rid, chooser)
        else:
            self._send(state, rid, "updateMovingStatus", after=p.wait_increment_ms)

    def _update_moving_status(self, state, rid, args, chooser):
        r = state.robots[rid]
        p = self.ctx.robots[rid]
        if r.status in (Status.ARRIVED, Status.STUCK):
            return
        if r.status == Status.BACKING_OFF:
            if r.back_steps <= 0:
                self._finish_backoff(state, rid)
            else:
                self._step_towards(state, rid, r.back_dir, backing=True, chooser=chooser)
            return
        while r.path and (r.pose.rx, r.pose.ry) == r.path[0]:
            r.path = r.path[1:]
        if not r.path:
            if r.distance2target_mm <= p.arrival_tolerance_mm:
                r.status = Status.ARRIVED
                return
            if not r.path_pending:
                r.path_pending = True
                self._send(state, MAP_SERVER_ID, "generatePath", (rid, p.goal), after=self.ctx.service_latency_ms)
            return
        w1 = r.path[0]
        dx = w1[0] - r.pose.rx
        dy = w1[1] - r.pose.ry
        target_dir = STEP_TO_DIR[((dx > 0) - (dx < 0), (dy > 0) - (dy < 0))]
        self._step_towards(state, rid, target_dir, backing=False, chooser=chooser)

    def _step_towards(self, state, rid, target_dir, backing, chooser):
        """Shared hop mechanics: rotate first, then hop if the way is clear."""
        r = state.robots[rid]
        p = self.ctx.robots[rid]
        if r.pose.rdir != target_dir:
            diff = (target_dir - r.pose.rdir) % 8
            ndir = (r.pose.rdir + (1 if diff <= 4 else -1)) % 8  # shorter way; 180 ties turn +
            dur = rotate_duration_ms(r.pose.rdir, ndir, p.angular_speed_deg_s)
            r.pose = r.pose._replace(rdir=ndir)
            r.status = Status.BACKING_OFF if backing else Status.ROTATING
            self._send(state, rid, "updateMovingStatus", after=max(1, dur))
            return
        d = self._blocking_distance(r, p, target_dir)
        sx, sy = DIR_STEPS[target_dir]
        dest = (r.pose.rx + sx, r.pose.ry + sy)
        dest_ok = self.ctx.inflated[rid].in_bounds(*dest) and not self.ctx.inflated[rid].is_occupied(*dest)
        if d > p.stop_zone_mm and dest_ok:
            old = r.pose
            r.pose = DiscretePose(dest[0], dest[1], target_dir)
            r.wait_count_ms = 0
            r.distance2target_mm = octile_distance_mm(dest, p.goal, self.ctx.grid.cell_width_mm)
            if backing:
                r.back_steps -= 1
                r.status = Status.BACKING_OFF
            else:
                if r.path and dest == r.path[0]:
                    r.path = r.path[1:]
                r.status = Status.MOVING
            self._send(state, MAP_SERVER_ID, "updateRobotLocation", (rid, r.pose), after=self.ctx.service_latency_ms)
            self._send(state, rid, "updateMovingStatus", after=move_duration_ms(old, r.pose, p.speed_mm_s, self.ctx.grid))
            return
        # blocked: wait one increment, escalate past the patience threshold
        if not backing:
            r.status = Status.WAITING
        r.wait_count_ms += p.wait_increment_ms
        if r.wait_count_ms > p.max_wait_ms:
            self._resolve_congestion(state, rid, chooser)
        else:
            self._send(state, rid, "updateMovingStatus", after=p.wait_increment_ms)

    def _finish_backoff(self, state, rid):
        r = state.robots[rid]
        r.back_dir = None
        r.back_steps = 0
        r.status = Status.WAITING
        r.path_pending = True
        self._send(state, MAP_SERVER_ID, "generatePath", (rid, self.ctx.robots[rid].goal), after=self.ctx.service_latency_ms)

    def _resolve_congestion(self, state, rid, chooser):
        """Back off toward free space and reroute; give up after max_reroutes."""
        r = state.robots[rid]
        p = self.ctx.robots[rid]
        r.reroute_count += 1
        if r.reroute_count > p.max_reroutes:
            r.status = Status.STUCK
            return
        facing = r.pose.rdir
        backdirs = [(facing + 4 - 1) % 8, (facing + 4) % 8, (facing + 4 + 1) % 8]
        spaces = [(self._blocking_distance(r, p, d), d) for d in backdirs]
        spaces.sort(key=lambda t: (-t[0], t[1]))
        if all(fs == 0 for fs, _ in spaces):
            r.status = Status.WAITING
            self._send(state, rid, "updateMovingStatus", after=p.wait_increment_ms)
            return
        top = spaces[: min(3, len(spaces))]
        fs_mm, backdir = top[chooser.choose(len(top))]
        hi = max(fs_mm // self.ctx.grid.cell_width_mm, 10)
        step_options = sorted({3, (3 + hi) // 2, hi})
        steps = step_options[chooser.choose(len(step_options))]
        r.back_dir = backdir
        r.back_steps = steps
        r.status = Status.BACKING_OFF
        r.path = ()
        r.path_pending = False
        self._send(state, rid, "updateMovingStatus", after=0)

    def _blocking_distance(self, r: RobotState, p: RobotParams, heading_dir: int) -> int:
        """Free distance toward heading_dir; 0 when nothing scanned yet."""
        if r.matrix is None:
            return 0
        try:
            return nearest_blocking_distance(r.matrix, heading_dir, p.fp)
        except DirectionNotScanned:
            return 0

    # -- map server servers -------------------------------------------------

    def _scan_obstacles(self, state, _target, args, chooser):
        rid, pose = args
        ms = state.mapserver
        if rid not in ms.poses:
            raise ModelError(f"scan request from unregistered robot {rid!r}")
        p = self.ctx.robots[rid]
        others_key = tuple(sorted((oid, ms.poses[oid]) for oid in ms.poses if oid != rid))
        cache_key = (rid, pose, others_key)
        entries = self.ctx.scan_cache.get(cache_key)
        if entries is None:
            others = [self.ctx.shadow(op, oid) for oid, op in others_key]
            entries = scan_obstacles(
                self.ctx.grid,
                pose,
                others,
                fov_deg=p.fov_deg,
                beam_step_deg=p.beam_step_deg,
                max_range_mm=p.max_range_mm,
            ).entries
            self.ctx.scan_cache[cache_key] = entries
        matrix = ObstacleMatrix(p.beam_step_deg, p.fov_deg, p.max_range_mm, state.clock, entries)
        self._send(state, rid, "onLaserScan", (matrix,), after=self.ctx.service_latency_ms)

    def _update_robot_location(self, state, _target, args, chooser):
        rid, pose = args
        ms = state.mapserver
        if rid not in ms.poses:
            raise ModelError(f"location update from unregistered robot {rid!r}")
        ms.poses[rid] = pose
        mover = self.ctx.shadow(pose, rid)
        for oid in sorted(ms.poses):
            if oid == rid:
                continue
            if shadows_intersect(mover, self.ctx.shadow(ms.poses[oid], oid)):
                ms.collision_flag = True
                ms.colliding = tuple(sorted((rid, oid)))
                break

    def _generate_path(self, state, _target, args, chooser):
        rid, goal = args
        ms = state.mapserver
        if rid not in ms.poses:
            raise ModelError(f"path request from unregistered robot {rid!r}")
        start = (ms.poses[rid].rx, ms.poses[rid].ry)
        key = (rid, start, tuple(goal))
        waypoints = self.ctx.plan_cache.get(key)
        if waypoints is None:
            inflated = self.ctx.inflated[rid]
            try:
                path = generate_path(inflated, start, tuple(goal))
                path = consolidate_waypoints(path)
                path = eliminate_zigzag(path, inflated)
                waypoints = path.waypoints
            except (NoPath, InvalidEndpoint):
                waypoints = ()
            self.ctx.plan_cache[key] = waypoints
        self._send(state, rid, "onNewPath", (waypoints,), after=self.ctx.service_latency_ms)

    _ROBOT_DISPATCH = {
        "doLaserScan": _do_laser_scan,
        "onLaserScan": _on_laser_scan,
        "onNewPath": _on_new_path,
        "updateMovingStatus": _update_moving_status,
    }
    _MAP_DISPATCH = {
        "scanObstacles": _scan_obstacles,
        "generatePath": _generate_path,
        "updateRobotLocation": _update_robot_location,
    }


def initial_state(ctx: EngineContext, starts: dict) -> ModelState:
    """World at time zero: every robot gets a scan kick-off and a move loop."""
    robots = {}
    for rid in sorted(ctx.robots):
        pose = starts[rid]
        robots[rid] = RobotState(
            pose=pose,
            distance2target_mm=octile_distance_mm(
                (pose.rx, pose.ry), ctx.robots[rid].goal, ctx.grid.cell_width_mm
            ),
        )
    state = ModelState(
        clock=0,
        robots=robots,
        mapserver=MapServerState({rid: robots[rid].pose for rid in sorted(robots)}),
        pending=[],
        next_seq=0,
    )
    eng = Engine(ctx)
    for rid in sorted(robots):
        eng._send(state, rid, "doLaserScan", after=0)
        eng._send(state, rid, "updateMovingStatus", after=0)
    return state
