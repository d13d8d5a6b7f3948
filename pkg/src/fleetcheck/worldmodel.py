"""Static world model: occupancy grid, trig tables, grid/world conversion.

The map is a grid of square cells, each `cell_width_mm` on a side.  Cell
(rx, ry) covers world x in [rx*w, (rx+1)*w) and y in [ry*w, (ry+1)*w);
row 0 of a map image is row 0 of the grid, and the world y axis follows
the row index.  A robot heading of d degrees points along
(cos d, sin d) in that frame, so heading 90 points toward increasing ry.
"""

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np

from .errors import OutOfBounds, ParseError, UnsupportedFormat
from .fixedpoint import SCALE, round_div

FREE = 0
OCCUPIED = 1


class WorldPoint(NamedTuple):
    x_mm: int
    y_mm: int


@dataclass(frozen=True)
class OccupancyGrid:
    """Immutable occupancy grid; `cells` is row-major, one byte per cell."""

    width_cells: int
    height_cells: int
    cell_width_mm: int
    cells: bytes

    def __post_init__(self):
        if self.width_cells <= 0 or self.height_cells <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.cell_width_mm <= 0:
            raise ValueError("cell_width_mm must be positive")
        if len(self.cells) != self.width_cells * self.height_cells:
            raise ValueError("cells length does not match grid dimensions")

    @cached_property
    def occ_array(self) -> np.ndarray:
        """(height, width) bool array, True where occupied."""
        arr = np.frombuffer(self.cells, dtype=np.uint8)
        return arr.reshape(self.height_cells, self.width_cells).astype(bool)

    def in_bounds(self, rx: int, ry: int) -> bool:
        return 0 <= rx < self.width_cells and 0 <= ry < self.height_cells

    def is_occupied(self, rx: int, ry: int) -> bool:
        return self.cells[ry * self.width_cells + rx] != FREE

    def occupied_count(self) -> int:
        return sum(1 for c in self.cells if c != FREE)


@dataclass(frozen=True)
class TrigTable:
    """cos/sin/tan of 0..359 degrees, scaled by 10^4 and rounded half away
    from zero.  tan is None at 90 and 270 where it is undefined."""

    cos_x1e4: tuple
    sin_x1e4: tuple
    tan_x1e4: tuple


def _round_half_away(value: float) -> int:
    return int(math.floor(abs(value) + 0.5)) * (1 if value >= 0 else -1)


@lru_cache(maxsize=1)
def precompute_trig() -> TrigTable:
    """Build the fixed-point lookup tables for all 360 integer degrees."""
    cos_t, sin_t, tan_t = [], [], []
    for deg in range(360):
        rad = math.radians(deg)
        cos_t.append(_round_half_away(math.cos(rad) * SCALE))
        sin_t.append(_round_half_away(math.sin(rad) * SCALE))
        if deg in (90, 270):
            tan_t.append(None)
        else:
            tan_t.append(_round_half_away(math.tan(rad) * SCALE))
    return TrigTable(tuple(cos_t), tuple(sin_t), tuple(tan_t))


def parse_text_grid(text: str, cell_width_mm: int) -> OccupancyGrid:
    """Parse a '0'/'1' character grid, one row per line."""
    rows = [line for line in text.splitlines() if line != ""]
    if not rows:
        raise ParseError("empty map text")
    width = len(rows[0])
    cells = bytearray()
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"ragged row {i}: expected {width} symbols, got {len(row)}")
        for ch in row:
            if ch == "0":
                cells.append(FREE)
            elif ch == "1":
                cells.append(OCCUPIED)
            else:
                raise ParseError(f"unexpected symbol {ch!r} in row {i}")
    return OccupancyGrid(width, len(rows), cell_width_mm, bytes(cells))


def to_text_grid(grid: OccupancyGrid) -> str:
    """Inverse of parse_text_grid (trailing newline included)."""
    lines = []
    for ry in range(grid.height_cells):
        row = grid.cells[ry * grid.width_cells : (ry + 1) * grid.width_cells]
        lines.append("".join("1" if c else "0" for c in row))
    return "\n".join(lines) + "\n"


class _PgmTokens:
    """Whitespace/comment-aware tokenizer over the ASCII part of a PGM."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def next_token(self) -> bytes:
        while self.pos < len(self.data):
            c = self.data[self.pos : self.pos + 1]
            if c == b"#":
                nl = self.data.find(b"\n", self.pos)
                if nl < 0:
                    self.pos = len(self.data)
                else:
                    self.pos = nl + 1
            elif c.isspace():
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < len(self.data) and not self.data[self.pos : self.pos + 1].isspace():
            if self.data[self.pos : self.pos + 1] == b"#":
                break
            self.pos += 1
        if start == self.pos:
            raise ParseError("unexpected end of PGM header")
        return self.data[start : self.pos]

    def next_int(self, what: str) -> int:
        tok = self.next_token()
        try:
            return int(tok)
        except ValueError:
            raise ParseError(f"bad PGM {what}: {tok!r}") from None


def parse_pgm(data: bytes, cell_width_mm: int, occupied_threshold: int = 128) -> OccupancyGrid:
    """Parse a P2 (ASCII) or P5 (binary) PGM into an occupancy grid.

    A pixel whose gray value is below `occupied_threshold` is occupied;
    one pixel maps to one cell.
    """
    if len(data) < 2:
        raise ParseError("truncated PGM")
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        if magic[:1] == b"P":
            raise UnsupportedFormat(f"unsupported netpbm magic {magic!r}")
        raise ParseError("not a PGM file")
    toks = _PgmTokens(data)
    toks.next_token()  # magic, already validated
    width = toks.next_int("width")
    height = toks.next_int("height")
    maxval = toks.next_int("maxval")
    if width <= 0 or height <= 0:
        raise ParseError("non-positive PGM dimensions")
    if not 0 < maxval <= 255:
        raise ParseError(f"unsupported PGM maxval {maxval}")
    n = width * height
    if magic == b"P5":
        start = toks.pos + 1  # single whitespace byte after maxval
        raster = data[start : start + n]
        if len(raster) < n:
            raise ParseError("PGM raster shorter than promised dimensions")
        values = raster
    else:
        values = []
        for _ in range(n):
            v = toks.next_int("pixel")
            if not 0 <= v <= maxval:
                raise ParseError(f"pixel value {v} out of range 0..{maxval}")
            values.append(v)
    cells = bytes(OCCUPIED if v < occupied_threshold else FREE for v in values)
    return OccupancyGrid(width, height, cell_width_mm, cells)


def to_pgm(grid: OccupancyGrid) -> bytes:
    """Render a grid back to a P2 PGM (occupied -> 0, free -> 255)."""
    lines = [b"P2", f"{grid.width_cells} {grid.height_cells}".encode(), b"255"]
    for ry in range(grid.height_cells):
        row = grid.cells[ry * grid.width_cells : (ry + 1) * grid.width_cells]
        lines.append(" ".join("0" if c else "255" for c in row).encode())
    return b"\n".join(lines) + b"\n"


def world_to_grid(p: WorldPoint, heading_deg: int, grid: OccupancyGrid):
    """Discretize a world point + heading into a (rx, ry, rdir) pose."""
    from .geometry import DiscretePose  # avoid import cycle at module load

    w = grid.cell_width_mm
    if not (0 <= p.x_mm < grid.width_cells * w and 0 <= p.y_mm < grid.height_cells * w):
        raise OutOfBounds(f"point {p} outside grid")
    return DiscretePose(p.x_mm // w, p.y_mm // w, (heading_deg % 360) // 45)


def grid_to_world(pose, grid: OccupancyGrid):
    """Place a discrete pose at its cell centre; returns (WorldPoint, heading_deg)."""
    if not grid.in_bounds(pose.rx, pose.ry):
        raise OutOfBounds(f"pose {pose} outside grid")
    if not 0 <= pose.rdir <= 7:
        raise OutOfBounds(f"invalid rdir {pose.rdir}")
    w = grid.cell_width_mm
    x = round_div((2 * pose.rx + 1) * w, 2)
    y = round_div((2 * pose.ry + 1) * w, 2)
    return WorldPoint(x, y), pose.rdir * 45
