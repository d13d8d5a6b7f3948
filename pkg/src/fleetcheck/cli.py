"""Command-line front end: a thin client over the service layer.

Commands build the same request models the HTTP endpoints accept and either
call the service functions in-process (default) or POST to a running server
(`--server URL`).  Exit codes are the machine contract:

    0  ALL_PROPERTIES_HOLD
    1  property violation (collision / deadlock / livelock)
    2  BOUND_REACHED (limits hit, nothing proved)
    3  configuration or input error
"""

import argparse
import base64
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from .errors import ConfigError, FleetcheckError
from .scenario import ScenarioSpec

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_BOUND = 2
EXIT_CONFIG = 3


def _load_spec_inline(path_str: str) -> "ScenarioSpec":
    """Read a scenario file and inline its map so any server can run it."""
    path = Path(path_str)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario is not valid JSON: {e}") from e
    try:
        spec = ScenarioSpec.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{loc}: {first['msg']}") from e
    if spec.map.text is None and spec.map.pgm_base64 is None:
        if not spec.map.source:
            raise ConfigError("map: one of source, text, pgm_base64 is required")
        src = Path(spec.map.source)
        if not src.is_absolute():
            src = path.parent / src
        if not src.exists():
            raise ConfigError(f"map.source: file not found: {src}")
        if spec.map.format == "text":
            spec.map.text = src.read_text()
        else:
            spec.map.pgm_base64 = base64.b64encode(src.read_bytes()).decode()
    return spec


class _Client:
    """Dispatches requests in-process or to a remote fleetcheck server."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def call(self, endpoint: str, request_model, response_cls):
        if self.server is None:
            from . import service

            fn = {
                "check": service.run_check,
                "simulate": service.run_simulate,
                "render": service.run_render,
                "preprocess": service.run_preprocess,
            }[endpoint]
            return fn(request_model)
        import httpx

        resp = httpx.post(
            f"{self.server}/{endpoint}",
            content=request_model.model_dump_json(),
            headers={"content-type": "application/json"},
            timeout=None,
        )
        if resp.status_code != 200:
            detail = resp.json().get("detail", resp.text) if resp.content else resp.text
            raise ConfigError(f"server returned {resp.status_code}: {detail}")
        return response_cls.model_validate(resp.json())


def _write_trace(path: str, records) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def _read_trace(path: str):
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def cmd_check(args) -> int:
    from .service import CheckRequest, CheckResponse

    spec = _load_spec_inline(args.scenario)
    req = CheckRequest(
        scenario=spec,
        max_model_time_ms=args.max_model_time,
        max_states=args.max_states,
        strategy=args.strategy,
        jobs=args.jobs,
    )
    resp = _Client(args.server).call("check", req, CheckResponse)
    for w in resp.warnings:
        print(w, file=sys.stderr)
    verdict = {
        "outcome": resp.outcome,
        "states": resp.states,
        "transitions": resp.transitions,
        "model_time_ms": resp.model_time_ms,
        "wall_ms": resp.wall_ms,
    }
    if resp.counterexample is not None:
        verdict["counterexample_steps"] = len(resp.counterexample)
        if args.trace_out:
            _write_trace(args.trace_out, [r.model_dump() for r in resp.counterexample])
            verdict["trace_file"] = args.trace_out
    print(json.dumps(verdict, sort_keys=True))
    if resp.outcome == "ALL_PROPERTIES_HOLD":
        return EXIT_OK
    if resp.outcome == "BOUND_REACHED":
        return EXIT_BOUND
    return EXIT_VIOLATION


def cmd_simulate(args) -> int:
    from .service import SimulateRequest, SimulateResponse

    spec = _load_spec_inline(args.scenario)
    req = SimulateRequest(
        scenario=spec,
        seed=args.seed,
        runs=args.runs,
        max_model_time_ms=args.max_model_time,
        include_traces=bool(args.trace_out),
    )
    resp = _Client(args.server).call("simulate", req, SimulateResponse)
    for w in resp.warnings:
        print(w, file=sys.stderr)
    for run in resp.runs:
        line = {
            "seed": run.seed,
            "outcome": run.outcome,
            "steps": run.steps,
            "model_time_ms": run.model_time_ms,
            "arrived": run.arrived,
        }
        if run.stuck:
            line["stuck"] = run.stuck
        if run.colliding:
            line["colliding"] = list(run.colliding)
        print(json.dumps(line, sort_keys=True))
        if args.trace_out and run.trace is not None:
            path = args.trace_out
            if "{seed}" in path:
                path = path.replace("{seed}", str(run.seed))
            elif args.runs > 1:
                path = f"{path}.seed{run.seed}"
            _write_trace(path, [r.model_dump() for r in run.trace])
    print(json.dumps({"aggregate": resp.aggregate}, sort_keys=True))
    return EXIT_OK


def cmd_render(args) -> int:
    from .service import RenderRequest, RenderResponse, TraceRecord

    spec = _load_spec_inline(args.scenario)
    times = []
    for chunk in args.at:
        times.extend(int(t) for t in chunk.split(",") if t != "")
    if not times:
        times = [0]
    trace = [TraceRecord(**r) for r in _read_trace(args.trace)]
    req = RenderRequest(scenario=spec, trace=trace, at_times_ms=times, pgm=bool(args.pgm_out))
    resp = _Client(args.server).call("render", req, RenderResponse)
    for frame in resp.frames:
        print(f"--- t={frame.time_ms}ms (requested {frame.requested_ms}ms)")
        if frame.notice:
            print(f"note: {frame.notice}", file=sys.stderr)
        print(frame.text, end="")
        if args.pgm_out and frame.pgm_base64:
            out = Path(args.pgm_out)
            out.mkdir(parents=True, exist_ok=True)
            dest = out / f"frame_{frame.requested_ms:08d}.pgm"
            dest.write_bytes(base64.b64decode(frame.pgm_base64))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .scenario import MapSpec
    from .service import PreprocessRequest, PreprocessResponse

    src = Path(args.map)
    if not src.exists():
        raise ConfigError(f"map file not found: {src}")
    fmt = args.format
    if fmt == "auto":
        fmt = "pgm" if src.suffix.lower() == ".pgm" else "text"
    kwargs = {"format": fmt, "cell_width_mm": args.cell_width_mm, "occupied_threshold": args.occupied_threshold}
    if fmt == "pgm":
        kwargs["pgm_base64"] = base64.b64encode(src.read_bytes()).decode()
    else:
        kwargs["text"] = src.read_text()
    req = PreprocessRequest(map=MapSpec(**kwargs))
    resp = _Client(args.server).call("preprocess", req, PreprocessResponse)
    grid_out = args.out_grid or (src.stem + ".grid.txt")
    trig_out = args.out_trig or "trig.csv"
    Path(grid_out).write_text(resp.text_grid)
    Path(trig_out).write_text(resp.trig_csv)
    print(json.dumps(
        {
            "width_cells": resp.width_cells,
            "height_cells": resp.height_cells,
            "occupied_cells": resp.occupied_cells,
            "grid_file": str(grid_out),
            "trig_file": str(trig_out),
        },
        sort_keys=True,
    ))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetcheck",
        description="Model-check and simulate multi-robot grid navigation scenarios.",
    )
    parser.add_argument("--server", default=None, help="URL of a running fleetcheck server (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="exhaustively verify a scenario")
    p.add_argument("scenario")
    p.add_argument("--max-model-time", type=int, default=600_000, help="model-time bound in ms")
    p.add_argument("--max-states", type=int, default=5_000_000)
    p.add_argument("--strategy", choices=["iddfs", "dfs", "bfs"], default="iddfs")
    p.add_argument("--jobs", type=int, default=1, help="parallel subtree workers")
    p.add_argument("--trace-out", default=None, help="write the counterexample trace (JSONL)")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("simulate", help="run seeded simulations")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--max-model-time", type=int, default=600_000)
    p.add_argument("--trace-out", default=None, help="trace file; '{seed}' placeholder supported")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("render", help="draw ASCII frames from a trace")
    p.add_argument("scenario")
    p.add_argument("--trace", required=True, help="trace JSONL produced by check/simulate")
    p.add_argument("--at", action="append", default=[], help="model time(s) in ms, comma-separated or repeated")
    p.add_argument("--pgm-out", default=None, help="directory for PGM frame files")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("preprocess", help="emit the text grid and trig table for a map")
    p.add_argument("map")
    p.add_argument("--format", choices=["auto", "pgm", "text"], default="auto")
    p.add_argument("--cell-width-mm", type=int, default=255)
    p.add_argument("--occupied-threshold", type=int, default=128)
    p.add_argument("--out-grid", default=None)
    p.add_argument("--out-trig", default=None)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FleetcheckError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
