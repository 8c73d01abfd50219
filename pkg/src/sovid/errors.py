"""Exception hierarchy shared across the stack.

Wire-level decode failures all derive from DecodeError so receive paths can
drop bad datagrams silently with a single except clause (no error replies,
which would enable reflection attacks).
"""


class SovidError(Exception):
    """Base class for all errors raised by this package."""


# -- wire ------------------------------------------------------------------

class DecodeError(SovidError):
    """An inbound datagram could not be accepted; drop without reply."""


class TruncatedError(DecodeError):
    """Datagram shorter than its declared layout."""


class UnknownOverlayError(DecodeError):
    """Envelope addressed to an overlay this node does not serve."""


class BadSignatureError(DecodeError):
    """Envelope signature does not verify under the sender key."""


class PayloadTooLargeError(SovidError):
    """Envelope payload exceeds the 2**24 byte bound."""


class BindFailure(SovidError):
    """UDP endpoint could not bind its socket."""


# -- anon ------------------------------------------------------------------

class InsufficientCandidatesError(SovidError):
    """Not enough eligible relays to satisfy a circuit request."""


class CircuitError(SovidError):
    """Circuit construction or use failed."""


class RendezvousTimeout(CircuitError):
    """Hidden-service rendezvous did not complete in time."""


class NoIntroductionPoint(CircuitError):
    """No introduction point of the target service could be reached."""


# -- zkp -------------------------------------------------------------------

class ZkpError(SovidError):
    """Proof construction or verification could not proceed."""


class ValueOutOfDomain(ZkpError):
    """Committed value outside the supported integer domain."""


class ValueOutsideRange(ZkpError):
    """Honest prover refuses: committed value not inside the interval."""


class MalformedTranscript(ZkpError):
    """Proof transcript failed structural parsing."""


# -- ssi -------------------------------------------------------------------

class SsiError(SovidError):
    """Identity-layer protocol failure."""


class UnknownAlgorithm(SsiError):
    """Attribute algorithm tag is not one of the supported identifiers."""


class ChainInvalid(SsiError):
    """Attribute hash chain failed structural verification."""


class AttestationInvalid(SsiError):
    """Attestation signature check failed."""


class ChannelDown(SsiError):
    """No usable channel to the remote party."""


# -- store -----------------------------------------------------------------

class StoreError(SovidError):
    """Persistent storage failure."""


class AuditInvalid(StoreError):
    """Audit record or log failed verification."""


class UnauthorizedRevoker(StoreError):
    """Revocation attempted by a key other than the original attester."""


# -- config / cli ----------------------------------------------------------

class ConfigError(SovidError):
    """Invalid or unknown configuration."""
