"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`JumpLDPError`,
which the CLI maps to exit code 1.
"""


class JumpLDPError(Exception):
    """Base class for domain errors."""


class RateSyntaxError(JumpLDPError, ValueError):
    """Malformed rate expression; ``position`` is the 0-based offset."""

    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} at offset {position}"
        super().__init__(message)


class UnknownIdentifier(RateSyntaxError):
    def __init__(self, name, position=None, text=None):
        self.name = name
        super().__init__(f"unknown identifier {name!r}", position, text)


class DivisionUnsupported(RateSyntaxError):
    def __init__(self, position=None, text=None):
        super().__init__("division is not supported in rate expressions", position, text)


class UnboundParameter(JumpLDPError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"parameter {name!r} has no value")

    def __str__(self):
        return self.args[0]


class ModelError(JumpLDPError, ValueError):
    """Model file or model invariants are invalid."""


class NegativeRate(JumpLDPError):
    pass


class OutOfDomain(JumpLDPError, ValueError):
    """A state lies outside the simplex A."""


class LeftDomain(JumpLDPError):
    """A simulated jump or a solver iterate left A."""

    def __init__(self, message, state=None, transition=None):
        self.state = state
        self.transition = transition
        super().__init__(message)


class NoConvergence(JumpLDPError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class HorizonMismatch(JumpLDPError, ValueError):
    pass


class WindowMismatch(JumpLDPError, ValueError):
    pass


class BadEpsilon(JumpLDPError, ValueError):
    pass


class InfeasibleWindow(JumpLDPError):
    def __init__(self, window, message=None):
        self.window = window
        super().__init__(message or f"window {window}: velocity outside the cone of available jumps")


class NotBirthDeath(JumpLDPError, ValueError):
    pass


class EmptyBoundary(JumpLDPError, ValueError):
    pass


class PreconditionError(JumpLDPError, ValueError):
    pass


class ReplicateError(JumpLDPError):
    """Wraps an exception raised inside one Monte Carlo replicate."""

    def __init__(self, index, error):
        self.index = index
        self.error = error
        super().__init__(f"replicate {index} failed: {type(error).__name__}: {error}")
