"""
AugRL Bench - Error hierarchy
Every failure raised by the bench derives from AugRLError
"""

from typing import Iterable, List, Optional


class AugRLError(Exception):
    """Base class for all bench errors"""


class ParameterDomainError(AugRLError, ValueError):
    """A transformation parameter lies outside its spec's bounds"""


class InvalidInputError(AugRLError, ValueError):
    """An argument is malformed (empty member list, shape mismatch, ...)"""


class ConfigError(AugRLError, ValueError):
    """Invalid configuration; carries every offending key or value"""

    def __init__(self, message: str, offenders: Optional[Iterable[str]] = None):
        self.offenders: List[str] = list(offenders or [])
        if self.offenders:
            message = f"{message}: {', '.join(self.offenders)}"
        super().__init__(message)


class UnsupportedError(AugRLError):
    """The requested operation is not defined for this input"""


class EmptyBufferError(AugRLError):
    """Sampling from a replay buffer with no filled slots"""


class CheckpointFormatError(AugRLError, OSError):
    """Malformed checkpoint container"""


class PGMFormatError(AugRLError, OSError):
    """Malformed PGM image"""
