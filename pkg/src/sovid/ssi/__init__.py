"""Self-sovereign identity: pseudonyms, attribute chains and the A/B flows."""

from . import frames
from .chain import (
    DEFAULT_VERSION,
    Attestation,
    Attribute,
    Metadata,
    Pseudonym,
    chain_anchor,
    load_pseudonym,
    save_pseudonym,
    verify_chain,
)
from .flows import (
    AttesterSession,
    AttestRequestFlow,
    SubjectSession,
    VerificationOutcome,
    VerifierSession,
)
from .service import CovertChannelAdapter, DirectChannelAdapter, SsiService

__all__ = [
    "frames",
    "DEFAULT_VERSION",
    "Attestation",
    "Attribute",
    "Metadata",
    "Pseudonym",
    "chain_anchor",
    "load_pseudonym",
    "save_pseudonym",
    "verify_chain",
    "AttesterSession",
    "AttestRequestFlow",
    "SubjectSession",
    "VerificationOutcome",
    "VerifierSession",
    "CovertChannelAdapter",
    "DirectChannelAdapter",
    "SsiService",
]
