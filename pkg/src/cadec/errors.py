"""Exception types shared across the package."""


class CadecError(Exception):
    """Base class for all domain errors."""


class InvalidShape(CadecError, ValueError):
    """Accelerator shape cannot hold the requested contours."""


class AllocationInfeasible(CadecError):
    """No conflict-free assignment was found within the trial budget."""


class ConflictDetected(CadecError):
    """Two contours in one tracing element were hit in the same cycle."""

    def __init__(self, message, scan_index=None, te=None):
        super().__init__(message)
        self.scan_index = scan_index
        self.te = te


class InvalidGeometry(CadecError, ValueError):
    """Frame / tile dimensions are inconsistent."""


class TraceOverflow(CadecError):
    """An accumulated trace exceeded the 16-bit output range."""


class NotEnoughCells(CadecError, ValueError):
    """Fewer contours available than the requested input grid needs."""


class DivergedTraining(CadecError):
    """Training loss became non-finite."""


class EmptyInput(CadecError, ValueError):
    """A metric was given zero-length inputs."""


class InvalidParams(CadecError, ValueError):
    """Generator parameters violate their invariants."""


class InvalidArgument(CadecError, ValueError):
    """An argument is outside the supported domain."""


class CorruptFile(CadecError):
    """A file failed structural validation; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
