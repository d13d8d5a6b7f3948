"""HTTP service wrapping the checker, simulator, renderer, and preprocessor.

Each endpoint is a pure request/response wrapper over the core package; the
CLI calls the same `run_*` functions in-process, so service and command line
share one implementation.  Scenario maps must be inlined (`text` or
`pgm_base64`) unless the server can read the referenced path itself.
"""

import base64
import csv
import io
from typing import List, Literal, Optional, Tuple

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from . import checker
from .errors import ConfigError, FleetcheckError, ReplayDivergence
from .rendering import frames_at_times, render_pgm_frame
from .scenario import MapSpec, Scenario, ScenarioSpec, load_map, load_scenario_data
from .worldmodel import precompute_trig, to_text_grid


class TraceRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    step: int
    time_ms: int
    actor: str
    server: str
    args: list
    seq: int
    choices: List[int]
    state_digest: str


class CheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    scenario: ScenarioSpec
    max_model_time_ms: int = Field(default=checker.DEFAULT_MAX_MODEL_TIME_MS, gt=0)
    max_states: int = Field(default=checker.DEFAULT_MAX_STATES, gt=0)
    strategy: Literal["iddfs", "dfs", "bfs"] = "iddfs"
    jobs: int = Field(default=1, ge=1)


class CheckResponse(BaseModel):
    outcome: str
    states: int
    transitions: int
    model_time_ms: int
    wall_ms: int
    warnings: List[str]
    counterexample: Optional[List[TraceRecord]] = None


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    scenario: ScenarioSpec
    seed: int = 0
    runs: int = Field(default=1, ge=1)
    max_model_time_ms: int = Field(default=checker.DEFAULT_MAX_MODEL_TIME_MS, gt=0)
    include_traces: bool = False


class RunResult(BaseModel):
    seed: int
    outcome: str
    steps: int
    model_time_ms: int
    arrived: List[str]
    stuck: List[str]
    colliding: Optional[Tuple[str, str]] = None
    trace: Optional[List[TraceRecord]] = None


class SimulateResponse(BaseModel):
    runs: List[RunResult]
    aggregate: dict
    warnings: List[str]


class RenderRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    scenario: ScenarioSpec
    trace: List[TraceRecord]
    at_times_ms: List[int] = Field(min_length=1)
    pgm: bool = False


class Frame(BaseModel):
    requested_ms: int
    time_ms: int
    text: str
    poses: dict
    notice: Optional[str] = None
    pgm_base64: Optional[str] = None


class RenderResponse(BaseModel):
    frames: List[Frame]


class PreprocessRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    map: MapSpec


class PreprocessResponse(BaseModel):
    width_cells: int
    height_cells: int
    occupied_cells: int
    text_grid: str
    trig_csv: str


def _resolve(spec: ScenarioSpec) -> Scenario:
    return load_scenario_data(spec)


def run_check(req: CheckRequest) -> CheckResponse:
    sc = _resolve(req.scenario)
    if req.jobs > 1:
        verdict = checker.explore_parallel(
            sc,
            max_model_time_ms=req.max_model_time_ms,
            max_states=req.max_states,
            jobs=req.jobs,
        )
    else:
        from .scenario import build_runtime

        ctx, init = build_runtime(sc)
        verdict = checker.explore(
            ctx,
            init,
            max_model_time_ms=req.max_model_time_ms,
            max_states=req.max_states,
            strategy=req.strategy,
        )
    cex = None
    if verdict.counterexample is not None:
        cex = [TraceRecord(**r) for r in verdict.counterexample]
    return CheckResponse(
        outcome=verdict.outcome,
        states=verdict.states,
        transitions=verdict.transitions,
        model_time_ms=verdict.model_time_ms,
        wall_ms=verdict.wall_ms,
        warnings=sc.warnings,
        counterexample=cex,
    )


def run_simulate(req: SimulateRequest) -> SimulateResponse:
    from .scenario import build_runtime

    sc = _resolve(req.scenario)
    ctx, init = build_runtime(sc)
    runs = []
    counts = {"arrived": 0, "collided": 0, "stuck": 0, "deadlocked": 0, "bound_reached": 0}
    for seed in range(req.seed, req.seed + req.runs):
        records, summary = checker.simulate(
            ctx, init, seed, max_model_time_ms=req.max_model_time_ms, record_trace=req.include_traces
        )
        if summary.outcome == checker.OUTCOME_OK:
            counts["arrived"] += 1
        elif summary.outcome == checker.OUTCOME_COLLISION:
            counts["collided"] += 1
        elif summary.outcome == checker.OUTCOME_STUCK:
            counts["stuck"] += 1
        elif summary.outcome == checker.OUTCOME_DEADLOCK:
            counts["deadlocked"] += 1
        else:
            counts["bound_reached"] += 1
        runs.append(
            RunResult(
                seed=summary.seed,
                outcome=summary.outcome,
                steps=summary.steps,
                model_time_ms=summary.model_time_ms,
                arrived=summary.arrived,
                stuck=summary.stuck,
                colliding=summary.colliding,
                trace=[TraceRecord(**r) for r in records] if records is not None else None,
            )
        )
    return SimulateResponse(runs=runs, aggregate=counts, warnings=sc.warnings)


def run_render(req: RenderRequest) -> RenderResponse:
    from .geometry import DiscretePose
    from .scenario import build_runtime

    sc = _resolve(req.scenario)
    ctx, init = build_runtime(sc)
    trace = [r.model_dump() for r in req.trace]
    frames = frames_at_times(sc, ctx, init, trace, req.at_times_ms)
    out = []
    for f in frames:
        pgm = None
        if req.pgm:
            poses = {rid: DiscretePose(*p) for rid, p in f["poses"].items()}
            pgm = base64.b64encode(render_pgm_frame(sc, poses)).decode()
        out.append(Frame(**f, pgm_base64=pgm))
    return RenderResponse(frames=out)


def run_preprocess(req: PreprocessRequest) -> PreprocessResponse:
    grid = load_map(req.map)
    trig = precompute_trig()
    buf = io.StringIO()
    w = csv.writer(buf)
    for deg in range(360):
        tan = trig.tan_x1e4[deg]
        w.writerow([deg, trig.cos_x1e4[deg], trig.sin_x1e4[deg], "undef" if tan is None else tan])
    return PreprocessResponse(
        width_cells=grid.width_cells,
        height_cells=grid.height_cells,
        occupied_cells=grid.occupied_count(),
        text_grid=to_text_grid(grid),
        trig_csv=buf.getvalue(),
    )


app = FastAPI(title="fleetcheck", version="0.1.0")


def _guard(fn, req):
    try:
        return fn(req)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e)) from e
    except ReplayDivergence as e:
        raise HTTPException(status_code=409, detail=str(e)) from e
    except FleetcheckError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e


@app.get("/health")
def health():
    return {"status": "ok", "version": "0.1.0"}


@app.post("/check", response_model=CheckResponse)
def check_endpoint(req: CheckRequest):
    return _guard(run_check, req)


@app.post("/simulate", response_model=SimulateResponse)
def simulate_endpoint(req: SimulateRequest):
    return _guard(run_simulate, req)


@app.post("/render", response_model=RenderResponse)
def render_endpoint(req: RenderRequest):
    return _guard(run_render, req)


@app.post("/preprocess", response_model=PreprocessResponse)
def preprocess_endpoint(req: PreprocessRequest):
    return _guard(run_preprocess, req)
