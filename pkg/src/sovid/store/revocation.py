"""Attestation revocation, three ways.

Mode 1 (register): the attester's own node answers signed status queries,
giving instant effect at the price of the attester observing attribute use.
Mode 2 (shared log): signed revocation entries flood the gossip overlay and
become effective at each verifier on receipt. Mode 3 (validity terms):
attributes expire from metadata alone, with no revocation message at all.

Only the original attester's key can revoke its own attestation: entries are
signed, and an entry only affects attestations by the same key.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from ..dpki import keys
from ..errors import StoreError, TruncatedError, UnauthorizedRevoker

REVOCATION_SET_CAP = 100_000  # unbounded shared-log growth is not solved here

_SIGN_CONTEXT = b"revoke"


class RevocationMode(Enum):
    REGISTER = 1
    SHARED_LOG = 2
    VALIDITY_TERMS = 3


class RevocationStatus(Enum):
    VALID = "valid"
    REVOKED = "revoked"
    EXPIRED = "expired"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class RevocationEntry:
    metadata_hash: bytes
    attester_key: bytes
    revoked_at: int
    signature: bytes

    @classmethod
    def create(cls, attester: keys.KeyPair, metadata_hash: bytes,
               revoked_at: int) -> "RevocationEntry":
        message = _SIGN_CONTEXT + metadata_hash + struct.pack(">Q", revoked_at)
        return cls(metadata_hash, attester.public, revoked_at,
                   attester.sign(message))

    def verify(self) -> bool:
        message = _SIGN_CONTEXT + self.metadata_hash + struct.pack(
            ">Q", self.revoked_at)
        return keys.verify(self.attester_key, self.signature, message)

    def pack(self) -> bytes:
        return (self.metadata_hash + self.attester_key
                + struct.pack(">Q", self.revoked_at) + self.signature)

    @classmethod
    def unpack(cls, b: bytes) -> "RevocationEntry":
        if len(b) != 136:
            raise TruncatedError("revocation entry")
        (revoked_at,) = struct.unpack(">Q", b[64:72])
        return cls(bytes(b[:32]), bytes(b[32:64]), revoked_at, bytes(b[72:]))


class RevocationSet:
    """Node-local, monotone set of accepted revocation entries."""

    def __init__(self, cap: int = REVOCATION_SET_CAP):
        self._entries: dict[tuple[bytes, bytes], RevocationEntry] = {}
        self._cap = cap

    def add(self, entry: RevocationEntry) -> bool:
        """Accept a verified entry; unauthorized (bad-signature) ones raise."""
        if not entry.verify():
            raise UnauthorizedRevoker(entry.attester_key.hex()[:16])
        key = (entry.metadata_hash, entry.attester_key)
        if key in self._entries:
            return False
        if len(self._entries) >= self._cap:
            raise StoreError("revocation set at capacity")
        self._entries[key] = entry
        return True

    def is_revoked(self, metadata_hash: bytes, attester_key: bytes) -> bool:
        return (metadata_hash, attester_key) in self._entries

    def get(self, metadata_hash: bytes,
            attester_key: bytes) -> Optional[RevocationEntry]:
        return self._entries.get((metadata_hash, attester_key))

    def __len__(self) -> int:
        return len(self._entries)


def check_validity_terms(valid_from: Optional[int], valid_until: Optional[int],
                         now: int) -> RevocationStatus:
    """Mode 3: pure function of metadata and the clock; zero messages."""
    if valid_until is not None and now > valid_until:
        return RevocationStatus.EXPIRED
    if valid_from is not None and now < valid_from:
        return RevocationStatus.EXPIRED
    return RevocationStatus.VALID


StatusCallback = Callable[[RevocationStatus, Optional[RevocationEntry]], None]
