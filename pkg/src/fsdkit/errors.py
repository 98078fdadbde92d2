"""Exception types shared across the package."""


class FormatError(ValueError):
    """A serialized artifact (weight file, PLY, PGM, JSON record) is malformed.

    The message names the offending field or header so callers can report
    actionable diagnostics.
    """


class ComputationError(RuntimeError):
    """A numeric pipeline stage failed on valid-looking inputs."""
