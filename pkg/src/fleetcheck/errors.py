"""Exception hierarchy shared across the package."""


class FleetcheckError(Exception):
    """Base class for all fleetcheck errors."""


class ParseError(FleetcheckError):
    """Malformed map input (PGM header, text grid, ...)."""


class UnsupportedFormat(ParseError):
    """Recognizably an image, but not a format we read (e.g. PGM P1/P3)."""


class OutOfBounds(FleetcheckError):
    """World point or grid pose outside the occupancy grid."""


class InvalidHop(FleetcheckError):
    """Move between cells that are not 8-adjacent."""


class DirectionNotScanned(FleetcheckError):
    """Obstacle matrix does not cover the requested heading."""


class NoPath(FleetcheckError):
    """No walkable route between the requested cells."""


class InvalidEndpoint(FleetcheckError):
    """Path endpoint is occupied on the inflated grid."""


class ModelError(FleetcheckError):
    """Internal model-configuration bug (unknown server, unregistered robot)."""


class ConfigError(FleetcheckError):
    """Scenario file rejected: schema violation, bad map, initial collision."""


class ReplayDivergence(FleetcheckError):
    """Replayed trace does not reproduce the recorded state digests."""
