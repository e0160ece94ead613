"""Exception hierarchy shared across the package."""


class RayserdeError(Exception):
    """Base class for all rayserde errors."""


class ConfigError(RayserdeError):
    """Invalid configuration value (bad grid spec, sector angle, strategy order, ...)."""


class BoundsError(RayserdeError):
    """Coordinate outside its grid or cube."""


class ContractError(RayserdeError):
    """Caller violated an operation contract (shape/length mismatch, bad step size)."""


class CapacityError(RayserdeError):
    """A configured capacity limit was exceeded (cell cap, positional table length)."""


class FormatError(RayserdeError):
    """Malformed file: bad magic, version, truncation, or checksum."""


class NumericError(RayserdeError):
    """Non-finite value produced during numeric evaluation."""


class SequenceLookupError(RayserdeError, LookupError):
    """Requested voxel row is absent from the serialized sequences."""
