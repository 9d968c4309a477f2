"""Exception hierarchy shared by all modules."""


class GarbledMaxoutError(Exception):
    """Base class for every error raised by this package."""


class ContractError(GarbledMaxoutError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class RangeError(ContractError):
    """A signed value lies outside the representable range Z_q."""


class QuantizationOverflow(GarbledMaxoutError, OverflowError):
    """A scaled coefficient does not fit into Z_q."""


class DomainError(GarbledMaxoutError, ValueError):
    """A state lies outside the declared state domain."""


class BuildError(GarbledMaxoutError):
    """A circuit could not be built for the requested parameters."""


class EvaluationError(GarbledMaxoutError):
    """Plaintext or garbled evaluation failed (missing input, integrity check)."""


class SetupError(GarbledMaxoutError):
    """Offline provisioning refused an uncertified configuration."""


class ProtocolError(GarbledMaxoutError):
    """A party observed an out-of-order, stale, malformed or replayed message."""

    def __init__(self, message, position=None):
        super().__init__(message if position is None else f"{message} (transcript position {position})")
        self.position = position
