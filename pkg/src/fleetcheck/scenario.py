"""Scenario schema, loading, validation, and world construction.

A scenario is a JSON object: a map reference, a `defaults` record, and a list
of robots that inherit from the defaults.  Map content can come from a file
(`source`, resolved relative to the scenario file) or be inlined (`text` /
`pgm_base64`), which is how the HTTP service receives it.

Validation enforces the safety-relationship guard at load time: a robot whose
edge-hop time is not strictly greater than twice its scan period gets a WARN
line (not an error; deliberately bad configurations are legitimate inputs).
"""

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .actors import EngineContext, ModelState, RobotParams, initial_state
from .errors import ConfigError
from .fixedpoint import round_div
from .geometry import DiscretePose, Footprint, check_collision
from .planner import inflate_grid
from .worldmodel import OccupancyGrid, parse_pgm, parse_text_grid


class FootprintSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    length_mm: int = Field(gt=0)
    width_mm: int = Field(gt=0)
    safety_margin_mm: int = Field(default=0, ge=0)


class MapSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    format: Literal["pgm", "text"]
    cell_width_mm: int = Field(gt=0)
    occupied_threshold: int = Field(default=128, ge=0, le=255)
    source: Optional[str] = None
    text: Optional[str] = None
    pgm_base64: Optional[str] = None


class RobotDefaults(BaseModel):
    model_config = ConfigDict(extra="forbid")
    footprint: FootprintSpec = FootprintSpec(length_mm=400, width_mm=400)
    speed_mm_s: int = Field(default=1000, gt=0)
    angular_speed_deg_s: int = Field(default=90, gt=0)
    scan_period_ms: int = Field(default=100, gt=0)
    fov_deg: Literal[180, 270, 360] = 360
    beam_step_deg: int = Field(default=2, gt=0)
    max_range_mm: int = Field(default=10_000, gt=0)
    stop_zone_mm: int = Field(default=300, ge=0)
    wait_increment_ms: int = Field(default=200, gt=0)
    max_wait_ms: int = Field(default=1000, gt=0)
    max_reroutes: int = Field(default=10, gt=0)
    arrival_tolerance_mm: Optional[int] = Field(default=None, gt=0)  # default: one cell


class RobotSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str = Field(min_length=1)
    start_cell: Tuple[int, int]
    start_dir: int = Field(default=0, ge=0, le=7)
    goal_cell: Tuple[int, int]
    footprint: Optional[FootprintSpec] = None
    speed_mm_s: Optional[int] = Field(default=None, gt=0)
    angular_speed_deg_s: Optional[int] = Field(default=None, gt=0)
    scan_period_ms: Optional[int] = Field(default=None, gt=0)
    fov_deg: Optional[Literal[180, 270, 360]] = None
    beam_step_deg: Optional[int] = Field(default=None, gt=0)
    max_range_mm: Optional[int] = Field(default=None, gt=0)
    stop_zone_mm: Optional[int] = Field(default=None, ge=0)
    wait_increment_ms: Optional[int] = Field(default=None, gt=0)
    max_wait_ms: Optional[int] = Field(default=None, gt=0)
    max_reroutes: Optional[int] = Field(default=None, gt=0)
    arrival_tolerance_mm: Optional[int] = Field(default=None, gt=0)


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    map: MapSpec
    defaults: RobotDefaults = RobotDefaults()
    robots: List[RobotSpec] = Field(min_length=1)
    service_latency_ms: int = Field(default=0, ge=0)


@dataclass
class Scenario:
    """A fully resolved scenario: spec + parsed grid + per-robot parameters."""

    spec: ScenarioSpec
    grid: OccupancyGrid
    params: dict  # robot id -> RobotParams
    starts: dict  # robot id -> DiscretePose
    warnings: list


def _resolve_field(robot: RobotSpec, defaults: RobotDefaults, name: str):
    v = getattr(robot, name)
    return v if v is not None else getattr(defaults, name)


def load_map(spec: MapSpec, base_dir: Optional[Path] = None) -> OccupancyGrid:
    """Read grid content from inline fields or the referenced file."""
    text = spec.text
    raw = base64.b64decode(spec.pgm_base64) if spec.pgm_base64 else None
    if text is None and raw is None:
        if not spec.source:
            raise ConfigError("map: one of source, text, pgm_base64 is required")
        path = Path(spec.source)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"map.source: file not found: {path}")
        if spec.format == "text":
            text = path.read_text()
        else:
            raw = path.read_bytes()
    if spec.format == "text":
        if text is None:
            raise ConfigError("map.format is 'text' but only PGM content was provided")
        return parse_text_grid(text, spec.cell_width_mm)
    if raw is None:
        raise ConfigError("map.format is 'pgm' but only text content was provided")
    return parse_pgm(raw, spec.cell_width_mm, spec.occupied_threshold)


def resolve_scenario(spec: ScenarioSpec, base_dir: Optional[Path] = None) -> Scenario:
    """Validate the scenario against the map and build runtime parameters."""
    try:
        grid = load_map(spec.map, base_dir)
    except ConfigError:
        raise
    except Exception as e:  # map parser errors carry their own context
        raise ConfigError(f"map: {e}") from e

    warnings = []
    params = {}
    starts = {}
    seen = set()
    inflated_cache = {}
    for i, robot in enumerate(spec.robots):
        where = f"robots[{i}] ({robot.id})"
        if robot.id in seen:
            raise ConfigError(f"{where}: duplicate robot id")
        seen.add(robot.id)
        fp_spec = robot.footprint or spec.defaults.footprint
        fp = Footprint(fp_spec.length_mm, fp_spec.width_mm, fp_spec.safety_margin_mm)
        tolerance = _resolve_field(robot, spec.defaults, "arrival_tolerance_mm")
        if tolerance is None:
            tolerance = grid.cell_width_mm
        p = RobotParams(
            id=robot.id,
            goal=tuple(robot.goal_cell),
            fp=fp,
            speed_mm_s=_resolve_field(robot, spec.defaults, "speed_mm_s"),
            angular_speed_deg_s=_resolve_field(robot, spec.defaults, "angular_speed_deg_s"),
            scan_period_ms=_resolve_field(robot, spec.defaults, "scan_period_ms"),
            fov_deg=_resolve_field(robot, spec.defaults, "fov_deg"),
            beam_step_deg=_resolve_field(robot, spec.defaults, "beam_step_deg"),
            max_range_mm=_resolve_field(robot, spec.defaults, "max_range_mm"),
            stop_zone_mm=_resolve_field(robot, spec.defaults, "stop_zone_mm"),
            wait_increment_ms=_resolve_field(robot, spec.defaults, "wait_increment_ms"),
            max_wait_ms=_resolve_field(robot, spec.defaults, "max_wait_ms"),
            max_reroutes=_resolve_field(robot, spec.defaults, "max_reroutes"),
            arrival_tolerance_mm=tolerance,
        )
        if p.fov_deg % p.beam_step_deg != 0:
            raise ConfigError(f"{where}: fov_deg must be a multiple of beam_step_deg")
        params[robot.id] = p
        starts[robot.id] = DiscretePose(robot.start_cell[0], robot.start_cell[1], robot.start_dir)

        if fp not in inflated_cache:
            inflated_cache[fp] = inflate_grid(grid, fp)
        inflated = inflated_cache[fp]
        for name, cell in (("start_cell", robot.start_cell), ("goal_cell", robot.goal_cell)):
            if not grid.in_bounds(*cell):
                raise ConfigError(f"{where}: {name} {tuple(cell)} outside the {grid.width_cells}x{grid.height_cells} grid")
            if inflated.is_occupied(*cell):
                raise ConfigError(f"{where}: {name} {tuple(cell)} occupied on the inflated grid")

        # safety relationship: an edge hop must outlast two scan periods
        edge_hop_ms = round_div(grid.cell_width_mm * 1000, p.speed_mm_s)
        if edge_hop_ms <= 2 * p.scan_period_ms:
            warnings.append(
                f"WARN {robot.id}: edge hop {edge_hop_ms} ms is not greater than "
                f"2 x scan period ({2 * p.scan_period_ms} ms); obstacle data may go "
                f"stale mid-action"
            )

    ids = sorted(params)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if check_collision(starts[a], params[a].fp, starts[b], params[b].fp, grid):
                raise ConfigError(f"robots {a} and {b} start in collision")

    return Scenario(spec, grid, params, starts, warnings)


def load_scenario(path) -> Scenario:
    """Load and resolve a scenario JSON file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario is not valid JSON: {e}") from e
    return load_scenario_data(data, base_dir=path.parent)


def load_scenario_data(data, base_dir: Optional[Path] = None) -> Scenario:
    """Resolve a scenario from an already-parsed JSON object (or model)."""
    if isinstance(data, ScenarioSpec):
        spec = data
    else:
        try:
            spec = ScenarioSpec.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(p) for p in first["loc"])
            raise ConfigError(f"{loc}: {first['msg']}") from e
    return resolve_scenario(spec, base_dir)


def build_runtime(scenario: Scenario):
    """EngineContext plus the initial ModelState for a resolved scenario."""
    inflated_by_fp = {}
    inflated = {}
    for rid, p in scenario.params.items():
        if p.fp not in inflated_by_fp:
            inflated_by_fp[p.fp] = inflate_grid(scenario.grid, p.fp)
        inflated[rid] = inflated_by_fp[p.fp]
    ctx = EngineContext(
        grid=scenario.grid,
        robots=dict(scenario.params),
        inflated=inflated,
        service_latency_ms=scenario.spec.service_latency_ms,
    )
    return ctx, initial_state(ctx, scenario.starts)
