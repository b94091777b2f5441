"""Exception types raised across the package."""


class PcrformError(Exception):
    """Base class for all package errors."""


class TooFewPoints(PcrformError):
    pass


class DegenerateConfiguration(PcrformError):
    pass


class NonPositiveScale(PcrformError):
    pass


class LengthMismatch(PcrformError):
    pass


class InvalidRatio(PcrformError):
    pass


class NoConsensus(PcrformError):
    pass


class RegistrationFailed(PcrformError):
    """Registration of one OFPS frame failed; ``frame_index`` names it."""

    def __init__(self, frame_index: int, reason: str = ""):
        self.frame_index = frame_index
        self.reason = reason
        super().__init__(f"registration failed at frame {frame_index}: {reason}")


class EmptyPeerSet(PcrformError):
    pass


class NonConvergence(PcrformError):
    pass


class SingularSystem(PcrformError):
    pass


class OutOfDomain(PcrformError):
    pass


class StaleCache(PcrformError):
    pass


class TimestampOutOfDomain(PcrformError):
    pass


class NonFiniteCost(PcrformError):
    pass


class InsufficientPeers(PcrformError):
    pass


class UnknownAgent(PcrformError):
    pass


class UnsupportedCount(PcrformError):
    pass


class ConfigError(PcrformError):
    """Invalid scenario configuration; ``key`` is the offending dotted path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class SimulationDiverged(PcrformError):
    pass
