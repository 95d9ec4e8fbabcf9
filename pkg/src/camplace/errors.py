"""Exception hierarchy."""


class CamplaceError(Exception):
    """Base class for all errors raised by camplace."""


class ParseError(CamplaceError, ValueError):
    """Malformed input file.  ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(CamplaceError, ValueError):
    """Invalid configuration or arguments."""


class CapacityError(CamplaceError):
    """A size cap was exceeded (voxel count, enumeration count)."""


class ProvenanceError(CamplaceError):
    """Artifacts were produced from different inputs than expected."""
