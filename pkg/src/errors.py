"""
errors.py - Exception hierarchy shared by every stage.

Each error carries a stable machine-readable ``code`` and the process
``exit_code`` the CLI should return for it (2 = bad input/usage,
3 = internal invariant violation).
"""


class MapToolkitError(Exception):
    """Base class for all toolkit errors."""

    code = "error"
    exit_code = 2

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "exit_code": self.exit_code}


class InvalidInstanceError(MapToolkitError):
    code = "invalid_instance"


class GeometryError(MapToolkitError):
    code = "geometry"


class DimensionMismatchError(MapToolkitError):
    code = "dimension_mismatch"


class AmbiguousEgoError(MapToolkitError):
    """The ego pixel lies on a drawn curb pixel, so its domain is undefined."""

    code = "ambiguous_ego"


class SceneParseError(MapToolkitError):
    code = "parse_error"


class SchemaError(MapToolkitError):
    code = "schema"


class UnknownClassError(SchemaError):
    code = "unknown_class"


class ConfigError(MapToolkitError):
    code = "config"


class InvariantViolation(MapToolkitError):
    code = "invariant"
    exit_code = 3
