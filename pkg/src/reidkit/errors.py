"""Exception taxonomy shared by all modules.

ValidationError covers anything wrong with inputs (files, shapes, parameter
ranges) and maps to CLI exit code 2; ComputationError covers failures that
arise from the data during a run (e.g. a degenerate evaluation) and maps to
exit code 3.
"""


class ReidkitError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ReidkitError, ValueError):
    """Invalid input: bad file, bad shape, bad parameter."""


class FileFormatError(ValidationError):
    """A binary container or CSV sidecar does not conform to its format."""


class ComputationError(ReidkitError, RuntimeError):
    """A run failed on valid inputs (degenerate data, unreachable target)."""
