"""Error types shared across the engine, the network harness and the swarm tools."""

from typing import Optional


class SwarmMPCError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(SwarmMPCError):
    """A real value or domain lies outside what the fixed-point ring can represent."""


class ShareCorruptionError(SwarmMPCError):
    """Two parties disagree on the summand they are supposed to hold in common."""


class ShapeError(SwarmMPCError):
    """Tensor shapes are incompatible for the requested operation."""


class ScaleError(SwarmMPCError):
    """Fixed-point scales of the operands do not line up."""


class TransportError(SwarmMPCError):
    """A transport could not be opened or a channel broke."""


class HandshakeError(SwarmMPCError):
    """Parties disagree on session parameters during setup."""


class ProtocolDesyncError(SwarmMPCError):
    """A round is missing a message or frames arrive out of sequence."""


class FrameError(SwarmMPCError):
    """A wire frame is malformed, oversized or does not match its declaration."""


class CapacityError(SwarmMPCError):
    """A sequence, cache or store ran out of room."""


class TripleExhaustedError(CapacityError):
    """The triple store has no unused triple of the requested shape."""


class ParseError(SwarmMPCError):
    """Command text does not belong to the command grammar."""

    def __init__(self, message: str, offset: int = 0, text: Optional[str] = None):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
        self.text = text


class ValidationError(SwarmMPCError):
    """A parsed command is well formed but violates an operating limit."""


class FormatError(SwarmMPCError):
    """A weight, scenario or dataset file is malformed."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
