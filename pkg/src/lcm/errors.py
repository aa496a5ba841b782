"""Exception hierarchy.

Subclasses of :class:`ProtocolViolation` are the assert failures of the
protocol: whoever raises one has caught the server misbehaving and halts.
"""


class LcmError(Exception):
    pass


class ProtocolViolation(LcmError):
    """Evidence of server misbehavior. Halts the party that detects it."""


class AuthenticationFailure(ProtocolViolation):
    pass


class ViewMismatch(ProtocolViolation):
    """The context's record of a client disagrees with the client's view."""


class EchoMismatch(ProtocolViolation):
    """A reply does not answer the client's outstanding invocation."""


class MalformedMessage(ProtocolViolation):
    pass


class ContextHalted(LcmError):
    """Raised when traffic reaches a halted context. No reply is produced."""


class PendingOperation(LcmError):
    pass


class NoPending(LcmError):
    pass


class AlreadyBootstrapped(LcmError):
    pass


class NotReady(LcmError):
    pass


class TargetNotFresh(LcmError):
    pass


class UnknownClient(LcmError):
    pass


class DuplicateClient(LcmError):
    pass


class MalformedTrace(LcmError):
    pass


class ConfigError(LcmError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ClientHalted(LcmError):
    """The client detected a violation earlier and refuses further work."""
