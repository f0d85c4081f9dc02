"""
Custom exception classes for the binaural toolkit.
These exceptions provide meaningful error messages and CLI exit codes.
"""
from typing import Any, Dict, Optional


class BinauralToolkitException(Exception):
    """Base exception for all toolkit errors."""

    def __init__(self, message: str, exit_code: int = 1):
        self.message = message
        self.exit_code = exit_code
        super().__init__(self.message)


class ValidationException(BinauralToolkitException):
    """Raised when input data violates a domain invariant."""

    def __init__(self, message: str):
        super().__init__(
            message=f"Validation error: {message}",
            exit_code=2
        )


class InvalidDegreeError(BinauralToolkitException):
    """Raised for an (n, m) pair outside 0 <= |m| <= n."""

    def __init__(self, n: int, m: int):
        super().__init__(
            message=f"Invalid SH degree: n={n}, m={m} (requires n >= 0 and |m| <= n)",
            exit_code=2
        )
        self.n = n
        self.m = m


class AliasingRiskError(BinauralToolkitException):
    """Raised when a quadrature grid cannot integrate the requested order exactly."""

    def __init__(self, requested: int, exact: int, what: str = "order"):
        super().__init__(
            message=f"Aliasing risk: requested {what} {requested} exceeds grid exactness {exact}",
            exit_code=2
        )
        self.requested = requested
        self.exact = exact


class InvalidTruncationError(BinauralToolkitException):
    """Raised when truncating to an order above the current one."""

    def __init__(self, current: int, requested: int):
        super().__init__(
            message=f"Cannot truncate order {current} coefficients to order {requested}",
            exit_code=2
        )
        self.current = current
        self.requested = requested


class InvalidGeometryError(BinauralToolkitException):
    """Raised when listener or source positions are outside the room or coincide."""

    def __init__(self, error: str):
        super().__init__(
            message=f"Invalid geometry: {error}",
            exit_code=2
        )
        self.error = error


class RIRTruncationError(BinauralToolkitException):
    """Raised when an image pulse does not fit inside the requested RIR length."""

    def __init__(self, delay: float, length: float):
        super().__init__(
            message=f"Image delay {delay:.6f}s plus filter does not fit in RIR length {length:.6f}s",
            exit_code=2
        )
        self.delay = delay
        self.length = length


class UndefinedDRRError(BinauralToolkitException):
    """Raised when the reverberant component carries no energy."""

    def __init__(self):
        super().__init__(
            message="DRR undefined: reverberant energy is zero",
            exit_code=2
        )


class InsufficientLengthError(BinauralToolkitException):
    """Raised when an impulse response does not reach the decay range needed for a fit."""

    def __init__(self, needed_db: float, reached_db: float):
        super().__init__(
            message=f"Decay range not reached: need {needed_db:.1f} dB, reached {reached_db:.1f} dB",
            exit_code=2
        )
        self.needed_db = needed_db
        self.reached_db = reached_db


class ContainerParseError(BinauralToolkitException):
    """Raised when a binary container or audio file header is malformed."""

    def __init__(self, path: str, offset: int, error: str):
        super().__init__(
            message=f"Parse error in {path} at byte offset {offset}: {error}",
            exit_code=3
        )
        self.path = path
        self.offset = offset
        self.error = error


class UnsupportedFormatError(BinauralToolkitException):
    """Raised for audio encodings the toolkit does not read or write."""

    def __init__(self, path: str, field: str, value: Any):
        super().__init__(
            message=f"Unsupported format in {path}: field '{field}' = {value}",
            exit_code=3
        )
        self.path = path
        self.field = field
        self.value = value


class UnsupportedSampleRateError(BinauralToolkitException):
    """Raised when a data set uses a sample rate outside the supported list."""

    def __init__(self, sample_rate: float, supported):
        super().__init__(
            message=f"Unsupported sample rate {sample_rate} Hz (supported: {list(supported)})",
            exit_code=3
        )
        self.sample_rate = sample_rate


class InsufficientDirectionsError(BinauralToolkitException):
    """Raised when an SH fit would be underdetermined."""

    def __init__(self, directions: int, order: int):
        needed = (order + 1) ** 2
        super().__init__(
            message=f"Order {order} fit needs at least {needed} directions, got {directions}",
            exit_code=2
        )
        self.directions = directions
        self.order = order


class OrderMismatchError(BinauralToolkitException):
    """Raised when a render order exceeds the order of an input."""

    def __init__(self, requested: int, available: int, what: str):
        super().__init__(
            message=f"Render order {requested} exceeds {what} order {available}",
            exit_code=2
        )
        self.requested = requested
        self.available = available


class SampleRateMismatchError(BinauralToolkitException):
    """Raised when two signals or filters disagree on sample rate."""

    def __init__(self, first: float, second: float):
        super().__init__(
            message=f"Sample rate mismatch: {first} Hz vs {second} Hz",
            exit_code=2
        )
        self.first = first
        self.second = second


class ZeroEnergyError(BinauralToolkitException):
    """Raised when a signal that must carry energy is silent."""

    def __init__(self, what: str):
        super().__init__(
            message=f"Zero-energy input: {what}",
            exit_code=2
        )


class InvalidDurationError(BinauralToolkitException):
    """Raised for inconsistent signal-generation durations."""

    def __init__(self, error: str):
        super().__init__(
            message=f"Invalid durations: {error}",
            exit_code=2
        )


class SilentSignalError(BinauralToolkitException):
    """Raised when a level operation receives a silent signal."""

    def __init__(self, label: str):
        super().__init__(
            message=f"Signal is silent: {label}",
            exit_code=2
        )
        self.label = label


class PipelineStageError(BinauralToolkitException):
    """Raised when a pipeline stage fails; carries the stage and scene coordinates."""

    def __init__(self, stage: str, coordinates: Optional[Dict[str, Any]], error: Exception):
        coords = ", ".join(f"{k}={v}" for k, v in (coordinates or {}).items())
        super().__init__(
            message=f"Stage '{stage}' failed [{coords}]: {error}",
            exit_code=getattr(error, "exit_code", 1)
        )
        self.stage = stage
        self.coordinates = dict(coordinates or {})
        self.error = error
