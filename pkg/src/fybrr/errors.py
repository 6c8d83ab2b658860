"""Exception hierarchy shared by every layer of the stack."""


class FybrrError(Exception):
    """Base class for all errors raised by this package."""


class MalformedInput(FybrrError, ValueError):
    """Input bytes violate a length or encoding contract."""


class AuthenticationError(FybrrError):
    """A ciphertext, signature, or signed request failed verification.

    The offending data must be discarded, never acknowledged.
    """


class HashMismatch(FybrrError):
    """Stored or received bytes do not hash to the content id they claim."""


class NotFound(FybrrError, KeyError):
    """A block, record, or proposal is unknown locally."""


class KeyFileError(MalformedInput):
    """Key file is missing the header or does not hold 128 hex-decoded bytes."""


class ConfigError(FybrrError):
    """Node config file is missing required keys or has unparseable values."""


class PeerOffline(FybrrError):
    """Rendezvous reports no live registration for the dialed peer."""


class DialTimeout(FybrrError):
    """Direct-channel handshake did not complete within the deadline."""


class ChannelClosed(FybrrError):
    """Direct channel is closed; pending traffic must use store-and-forward."""


class NotAMember(FybrrError):
    """Actor is not in the swarm membership set at the relevant epoch."""


class ProposalExpired(FybrrError):
    """Ballot cast after the proposal deadline."""


class ConnectivityError(FybrrError):
    """Both the direct path and the store-and-forward path are unreachable."""


class RpcError(FybrrError):
    """A peer RPC failed (transport error, timeout, or error status)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status
