"""Exception hierarchy shared across the audit stack."""


class ZkMcpError(Exception):
    """Base class for every error raised by this package."""


# message model
class TypeTooLong(ZkMcpError):
    pass


class IllegalByte(ZkMcpError):
    pass


class MalformedEnvelope(ZkMcpError):
    pass


class TooLong(ZkMcpError):
    pass


class UnknownType(ZkMcpError):
    pass


# hashing / circuit
class WrongLength(ZkMcpError):
    pass


class InvalidParams(ZkMcpError):
    pass


class WrongMessageCount(ZkMcpError):
    pass


class MalformedMessage(ZkMcpError):
    pass


class ShapeMismatch(ZkMcpError):
    pass


# proof system
class BackendUnavailable(ZkMcpError):
    pass


class RelationUnsatisfied(ZkMcpError):
    pass


class MalformedProof(ZkMcpError):
    pass


class CorruptCrs(ZkMcpError):
    pass


class CrsMismatch(ZkMcpError):
    pass


# protocol
class IllegalTransition(ZkMcpError):
    pass


class UnknownSession(IllegalTransition):
    """An event referenced a session the ASP has never seen (implicit INIT)."""


class SessionNotActive(ZkMcpError):
    pass


class ProveFailure(ZkMcpError):
    pass


# transport
class AspUnreachable(ZkMcpError):
    pass


class ProtocolError(ZkMcpError):
    """The peer answered with something that does not fit the wire protocol."""


class RemoteError(ProtocolError):
    """The ASP answered with an ``error`` envelope."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message
