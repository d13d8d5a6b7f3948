"""State-space exploration, deterministic simulation, and trace replay.

Global states are canonicalized by subtracting the smallest pending arrival
time from every absolute time field (message arrivals, deadlines, scan
timestamps); two states equal after the shift behave identically forever, so
the visited set stores only the 64-bit digest of the canonical serialization.
That time-shift equivalence is what makes the recurring scan loops finite.

Verification is assertion-style: exploration stops at the first collision,
stuck robot, or deadlock and returns a replayable counterexample.  Everything
is integer arithmetic, so digests and traces are identical across runs and
platforms.
"""

import hashlib
import random
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .actors import (
    MAP_SERVER_ID,
    Engine,
    EngineContext,
    Message,
    ModelState,
    NeedChoice,
    RandomChooser,
    RecordingChooser,
    Status,
    actor_sort_key,
    copy_state,
)
from .errors import ModelError, ReplayDivergence
from .geometry import DiscretePose
from .sensing import ObstacleMatrix

OUTCOME_OK = "ALL_PROPERTIES_HOLD"
OUTCOME_COLLISION = "COLLISION"
OUTCOME_DEADLOCK = "DEADLOCK"
OUTCOME_STUCK = "LIVELOCK_STUCK"
OUTCOME_BOUND = "BOUND_REACHED"

VIOLATIONS = (OUTCOME_COLLISION, OUTCOME_DEADLOCK, OUTCOME_STUCK)

DEFAULT_MAX_MODEL_TIME_MS = 600_000
DEFAULT_MAX_STATES = 5_000_000


# -- canonicalization --------------------------------------------------------


def canonical_shift(state: ModelState) -> int:
    if state.pending:
        return min(m.arrival_ms for m in state.pending)
    return state.clock


_entries_digests = {}  # id(entries) -> (entries, digest); strong ref pins the id


def _entries_digest(entries: tuple) -> str:
    """Content digest of a beam table, memoized by identity.

    Scan results are shared tuples from the context cache, so hashing each one
    once keeps state digests cheap; the digest itself depends only on content.
    """
    hit = _entries_digests.get(id(entries))
    if hit is not None and hit[0] is entries:
        return hit[1]
    d = hashlib.blake2b(repr(entries).encode(), digest_size=8).hexdigest()
    if len(_entries_digests) > 200_000:
        _entries_digests.clear()
    _entries_digests[id(entries)] = (entries, d)
    return d


def _canon_matrix(m: Optional[ObstacleMatrix], shift: int):
    if m is None:
        return None
    return (
        m.beam_step_deg,
        m.fov_deg,
        m.max_range_mm,
        m.scan_time_ms - shift,
        _entries_digest(m.entries),
    )


def _canon_args(args: tuple, shift: int):
    out = []
    for a in args:
        if isinstance(a, ObstacleMatrix):
            out.append(_canon_matrix(a, shift))
        else:
            out.append(a)
    return tuple(out)


def canonical_key(state: ModelState):
    """Nested tuple of the state after time-shift normalization."""
    shift = canonical_shift(state)
    robots = tuple(
        (
            rid,
            tuple(r.pose),
            int(r.status),
            r.path,
            r.wait_count_ms,
            r.reroute_count,
            r.distance2target_mm,
            r.path_pending,
            -1 if r.back_dir is None else r.back_dir,
            r.back_steps,
            _canon_matrix(r.matrix, shift),
        )
        for rid, r in sorted(state.robots.items())
    )
    ms = state.mapserver
    server = (
        tuple((rid, tuple(p)) for rid, p in sorted(ms.poses.items())),
        ms.collision_flag,
        ms.colliding,
    )
    msgs = tuple(
        sorted(
            (
                (
                    m.arrival_ms - shift,
                    m.target,
                    m.server,
                    _canon_args(m.args, shift),
                    None if m.deadline_ms is None else m.deadline_ms - shift,
                )
                for m in state.pending
            ),
            key=repr,
        )
    )
    return (robots, server, msgs)


def canonical_digest(state: ModelState) -> str:
    """64-bit hex digest of the canonical byte serialization."""
    data = repr(canonical_key(state)).encode()
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def classify(state: ModelState) -> Optional[str]:
    """Property check: first violation wins, then success, then 'keep going'."""
    if state.mapserver.collision_flag:
        return OUTCOME_COLLISION
    if any(r.status == Status.STUCK for r in state.robots.values()):
        return OUTCOME_STUCK
    if all(r.status == Status.ARRIVED for r in state.robots.values()):
        return "SUCCESS"
    if not state.pending:
        return OUTCOME_DEADLOCK
    return None


# -- trace records -------------------------------------------------------------


def _args_to_json(args: tuple):
    out = []
    for a in args:
        if isinstance(a, ObstacleMatrix):
            out.append(
                {
                    "beam_step_deg": a.beam_step_deg,
                    "fov_deg": a.fov_deg,
                    "max_range_mm": a.max_range_mm,
                    "scan_time_ms": a.scan_time_ms,
                    "entries": [list(e) for e in a.entries],
                }
            )
        elif isinstance(a, DiscretePose):
            out.append([a.rx, a.ry, a.rdir])
        elif isinstance(a, tuple):
            out.append([list(x) if isinstance(x, tuple) else x for x in a])
        else:
            out.append(a)
    return out


def make_record(step: int, msg: Message, choices, digest: str) -> dict:
    return {
        "step": step,
        "time_ms": msg.arrival_ms,
        "actor": msg.target,
        "server": msg.server,
        "args": _args_to_json(msg.args),
        "seq": msg.seq,
        "choices": list(choices),
        "state_digest": digest,
    }


def _light_steps_to_records(steps) -> list:
    """Expand (msg, choices, digest) path entries into full trace records."""
    return [make_record(i, msg, choices, digest) for i, (msg, choices, digest) in enumerate(steps)]


# -- verdicts -------------------------------------------------------------------


@dataclass
class Verdict:
    outcome: str
    counterexample: Optional[list] = None
    states: int = 0
    transitions: int = 0
    model_time_ms: int = 0
    wall_ms: int = 0

    def to_json(self) -> dict:
        d = {
            "outcome": self.outcome,
            "states": self.states,
            "transitions": self.transitions,
            "model_time_ms": self.model_time_ms,
            "wall_ms": self.wall_ms,
        }
        if self.counterexample is not None:
            d["counterexample_steps"] = len(self.counterexample)
        return d


@dataclass
class RunSummary:
    seed: int
    outcome: str
    steps: int
    model_time_ms: int
    arrived: list
    stuck: list
    colliding: Optional[tuple]


# -- exploration -----------------------------------------------------------------


class _Search:
    """One bounded depth-first sweep of the transition system."""

    def __init__(self, engine: Engine, time_bound: int, max_states: int, graph=None, use_visited=True):
        self.engine = engine
        self.time_bound = time_bound
        self.max_states = max_states
        self.graph = graph  # digest -> set(successor digests), when recording
        self.use_visited = use_visited
        self.states = 0
        self.transitions = 0
        self.max_time = 0
        self.time_bound_hit = False
        self.states_bound_hit = False

    def successors(self, state: ModelState):
        """Yield (msg, choices, next_state) over every ready message and every
        resolver choice; equal-arrival messages are the interleaving branches."""
        if not state.pending:
            return
        t = min(m.arrival_ms for m in state.pending)
        if t > self.time_bound:
            self.time_bound_hit = True
            return
        for msg in self.engine.ready_messages(state):
            prefixes = [()]
            while prefixes:
                pre = prefixes.pop()
                st = copy_state(state)
                ch = RecordingChooser(pre)
                try:
                    self.engine.execute(st, msg.seq, ch)
                except NeedChoice as e:
                    prefixes.extend(pre + (i,) for i in reversed(range(e.num_options)))
                    continue
                self.transitions += 1
                yield msg, tuple(ch.taken), st

    def run(self, init: ModelState):
        """Returns (violation outcome or None, counterexample or None)."""
        d0 = canonical_digest(init)
        first = classify(init)
        if first in VIOLATIONS:
            return first, []
        if first == "SUCCESS":
            return None, None
        visited = {d0}
        self.states = 1
        self.max_time = init.clock
        stack = [(init, self.successors(init), d0)]
        records = []  # light (msg, choices, digest) steps along the DFS path
        while stack:
            state, it, digest = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                if records:
                    records.pop()
                continue
            msg, choices, st2 = nxt
            d2 = canonical_digest(st2)
            if self.graph is not None:
                self.graph.setdefault(digest, set()).add(d2)
            step = (msg, choices, d2)
            self.max_time = max(self.max_time, st2.clock)
            outcome = classify(st2)
            if outcome in VIOLATIONS:
                return outcome, _light_steps_to_records(records + [step])
            if outcome == "SUCCESS":
                visited.add(d2)
                continue
            if self.use_visited and d2 in visited:
                continue
            visited.add(d2)
            self.states += 1
            if self.states >= self.max_states:
                self.states_bound_hit = True
                return None, None
            stack.append((st2, self.successors(st2), d2))
            records.append(step)
        return None, None


def _bfs_search(engine, init, time_bound, max_states):
    """Breadth-first variant; counterexamples rebuilt from parent links."""
    search = _Search(engine, time_bound, max_states)
    d0 = canonical_digest(init)
    first = classify(init)
    if first in VIOLATIONS:
        return first, [], search
    if first == "SUCCESS":
        return None, None, search
    parents = {d0: None}  # digest -> (parent digest, light step)
    visited = {d0}
    search.states = 1
    queue = deque([(init, d0)])
    while queue:
        state, digest = queue.popleft()
        for msg, choices, st2 in search.successors(state):
            d2 = canonical_digest(st2)
            step = (msg, choices, d2)
            search.max_time = max(search.max_time, st2.clock)
            outcome = classify(st2)
            if outcome in VIOLATIONS:
                trail = [step]
                cur = digest
                while parents[cur] is not None:
                    cur, prev_step = parents[cur]
                    trail.append(prev_step)
                trail.reverse()
                return outcome, _light_steps_to_records(trail), search
            if d2 in visited:
                continue
            visited.add(d2)
            if outcome == "SUCCESS":
                continue
            parents[d2] = (digest, step)
            search.states += 1
            if search.states >= search.max_states:
                search.states_bound_hit = True
                return None, None, search
            queue.append((st2, d2))
    return None, None, search


def explore(
    ctx: EngineContext,
    init: ModelState,
    *,
    max_model_time_ms: int = DEFAULT_MAX_MODEL_TIME_MS,
    max_states: int = DEFAULT_MAX_STATES,
    strategy: str = "iddfs",
    graph: Optional[dict] = None,
    use_visited: bool = True,
) -> Verdict:
    """Exhaustively explore the scenario's transition system.

    strategy: "iddfs" (default) doubles a model-time bound until the space is
    exhausted or the cap is reached; "dfs" runs one sweep at the cap; "bfs"
    finds shortest counterexamples at higher memory cost.  use_visited=False
    disables revisit pruning (test oracle for visited-set soundness; only
    terminates thanks to the time bound).
    """
    t0 = time.perf_counter()
    engine = Engine(ctx)
    states = transitions = 0
    max_time = 0

    if strategy == "bfs":
        outcome, cex, search = _bfs_search(engine, init, max_model_time_ms, max_states)
        states, transitions, max_time = search.states, search.transitions, search.max_time
        bound_hit = search.time_bound_hit or search.states_bound_hit
    elif strategy in ("dfs", "iddfs"):
        if strategy == "dfs":
            bounds = [max_model_time_ms]
        else:
            b = max(1000, max_model_time_ms // 8)
            bounds = []
            while b < max_model_time_ms:
                bounds.append(b)
                b *= 2
            bounds.append(max_model_time_ms)
        outcome, cex, bound_hit = None, None, False
        for b in bounds:
            search = _Search(engine, b, max_states, graph)
            outcome, cex = search.run(copy_state(init))
            states += search.states
            transitions += search.transitions
            max_time = max(max_time, search.max_time)
            if outcome is not None or search.states_bound_hit:
                bound_hit = search.states_bound_hit
                break
            if not search.time_bound_hit:
                bound_hit = False
                break
            bound_hit = True
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    wall_ms = int((time.perf_counter() - t0) * 1000)
    if outcome is not None:
        return Verdict(outcome, cex, states, transitions, max_time, wall_ms)
    if bound_hit:
        return Verdict(OUTCOME_BOUND, None, states, transitions, max_time, wall_ms)
    return Verdict(OUTCOME_OK, None, states, transitions, max_time, wall_ms)


def _frontier_split(engine: Engine, init: ModelState, time_bound: int, want: int):
    """Breadth-first split of the root into disjoint subtree seeds.

    Returns ("verdict", Verdict-args) when the answer is already known, or
    ("frontier", entries, stats) with entries = [(light-steps prefix, state)].
    """
    search = _Search(engine, time_bound, 10**18)
    d0 = canonical_digest(init)
    first = classify(init)
    if first in VIOLATIONS:
        return ("verdict", first, [], search)
    if first == "SUCCESS":
        return ("verdict", None, None, search)
    visited = {d0}
    search.states = 1
    entries = deque([([], init)])
    while entries and len(entries) < want:
        prefix, state = entries.popleft()
        for msg, choices, st2 in search.successors(state):
            d2 = canonical_digest(st2)
            step = (msg, choices, d2)
            search.max_time = max(search.max_time, st2.clock)
            outcome = classify(st2)
            if outcome in VIOLATIONS:
                return ("verdict", outcome, _light_steps_to_records(prefix + [step]), search)
            if outcome == "SUCCESS" or d2 in visited:
                continue
            visited.add(d2)
            search.states += 1
            entries.append((prefix + [step], st2))
    return ("frontier", list(entries), search)


def _parallel_worker(payload):
    """Explore one subtree in a child process; payload is fully picklable."""
    import json as _json

    from .scenario import build_runtime, load_scenario_data

    scenario_json, prefix, max_model_time_ms, max_states = payload
    sc = load_scenario_data(_json.loads(scenario_json))
    ctx, init = build_runtime(sc)
    engine = Engine(ctx)
    state = copy_state(init)
    for seq, choices in prefix:
        engine.execute(state, seq, RecordingChooser(tuple(choices)))
    search = _Search(engine, max_model_time_ms, max_states)
    outcome, cex = search.run(state)
    return {
        "outcome": outcome,
        "counterexample": cex,
        "states": search.states,
        "transitions": search.transitions,
        "max_time": search.max_time,
        "bound_hit": search.time_bound_hit or search.states_bound_hit,
    }


def explore_parallel(
    scenario,
    *,
    max_model_time_ms: int = DEFAULT_MAX_MODEL_TIME_MS,
    max_states: int = DEFAULT_MAX_STATES,
    jobs: int = 2,
) -> Verdict:
    """Partition the state space into subtrees and explore them in processes.

    Workers do not share a visited set, so overlapping subtrees may be
    re-explored and the reported state count can exceed the single-threaded
    one; the verdict and violation existence are worker-count independent
    (results are merged in deterministic frontier order).
    """
    import concurrent.futures

    from .scenario import build_runtime
    from .worldmodel import to_text_grid

    t0 = time.perf_counter()
    ctx, init = build_runtime(scenario)
    engine = Engine(ctx)
    got = _frontier_split(engine, init, max_model_time_ms, want=max(jobs * 4, 8))
    if got[0] == "verdict":
        _, outcome, cex, search = got
        wall = int((time.perf_counter() - t0) * 1000)
        if outcome is not None:
            return Verdict(outcome, cex, search.states, search.transitions, search.max_time, wall)
        bound = search.time_bound_hit or search.states_bound_hit
        return Verdict(
            OUTCOME_BOUND if bound else OUTCOME_OK,
            None,
            search.states,
            search.transitions,
            search.max_time,
            wall,
        )
    _, entries, search = got
    states, transitions, max_time = search.states, search.transitions, search.max_time
    bound_hit = search.time_bound_hit

    spec = scenario.spec.model_copy(deep=True)
    spec.map.text = to_text_grid(scenario.grid)
    spec.map.format = "text"
    spec.map.source = None
    spec.map.pgm_base64 = None
    scenario_json = spec.model_dump_json()

    payloads = [
        (scenario_json, [(m.seq, list(ch)) for m, ch, _ in prefix], max_model_time_ms, max_states)
        for prefix, _state in entries
    ]
    outcome, cex = None, None
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        for i, result in enumerate(pool.map(_parallel_worker, payloads)):
            states += result["states"]
            transitions += result["transitions"]
            max_time = max(max_time, result["max_time"])
            bound_hit = bound_hit or result["bound_hit"]
            if result["outcome"] is not None:
                outcome = result["outcome"]
                prefix_records = _light_steps_to_records(entries[i][0])
                suffix = result["counterexample"]
                for j, r in enumerate(suffix):
                    r["step"] = len(prefix_records) + j
                cex = prefix_records + suffix
                break
    wall = int((time.perf_counter() - t0) * 1000)
    if outcome is not None:
        return Verdict(outcome, cex, states, transitions, max_time, wall)
    if bound_hit:
        return Verdict(OUTCOME_BOUND, None, states, transitions, max_time, wall)
    return Verdict(OUTCOME_OK, None, states, transitions, max_time, wall)


# -- simulation ---------------------------------------------------------------


def simulate(
    ctx: EngineContext,
    init: ModelState,
    seed: int,
    *,
    max_model_time_ms: int = DEFAULT_MAX_MODEL_TIME_MS,
    record_trace: bool = False,
):
    """One deterministic run: ties go to the lowest (actor id, seq); resolver
    randomness comes from the seeded PRNG.  Identical seeds give identical
    traces, byte for byte."""
    engine = Engine(ctx)
    state = copy_state(init)
    rng = random.Random(seed)
    records = [] if record_trace else None
    step = 0
    outcome = None
    while True:
        got = classify(state)
        if got is not None:
            outcome = OUTCOME_OK if got == "SUCCESS" else got
            break
        t = min(m.arrival_ms for m in state.pending)
        if t > max_model_time_ms:
            outcome = OUTCOME_BOUND
            break
        msg = engine.ready_messages(state)[0]
        ch = RandomChooser(rng)
        engine.execute(state, msg.seq, ch)
        if record_trace:
            records.append(make_record(step, msg, ch.taken, canonical_digest(state)))
        step += 1
    summary = RunSummary(
        seed=seed,
        outcome=outcome,
        steps=step,
        model_time_ms=state.clock,
        arrived=sorted(r for r, st in state.robots.items() if st.status == Status.ARRIVED),
        stuck=sorted(r for r, st in state.robots.items() if st.status == Status.STUCK),
        colliding=state.mapserver.colliding,
    )
    return records, summary


# -- replay ---------------------------------------------------------------------


def replay(ctx: EngineContext, init: ModelState, trace: list) -> ModelState:
    """Re-execute a recorded trace, verifying the digest at every step."""
    state = copy_state(init)
    for rec in replay_iter(ctx, init, trace, _state=state):
        pass
    return state


def replay_iter(ctx: EngineContext, init: ModelState, trace: list, _state=None):
    """Generator over (record, state-after-step); raises ReplayDivergence."""
    engine = Engine(ctx)
    state = _state if _state is not None else copy_state(init)
    for rec in trace:
        ch = RecordingChooser(tuple(rec.get("choices", ())))
        try:
            engine.execute(state, rec["seq"], ch)
        except (NeedChoice, ModelError) as e:
            raise ReplayDivergence(f"step {rec['step']}: {e}") from None
        digest = canonical_digest(state)
        if digest != rec["state_digest"]:
            raise ReplayDivergence(
                f"step {rec['step']}: digest {digest} != recorded {rec['state_digest']}"
            )
        yield rec, state
