"""Bit-exact binary envelope format.

Every datagram on the wire is one envelope:

    version   1 byte   constant 0x02
    overlay  20 bytes  truncated SHA-256 of the overlay's registered name
    msg_type  1 byte
    sender   32 bytes  Ed25519 public key
    seq       8 bytes  unsigned big-endian, monotone per sender
    length    4 bytes  unsigned big-endian payload length
    payload   N bytes
    signature 64 bytes Ed25519 over all preceding bytes

Total size is exactly N + 130 bytes. Decoding rejects anything that is
length-inconsistent, addressed to an unknown overlay, or carries an invalid
signature; callers drop rejected datagrams without replying.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable

from ..dpki import keys
from ..errors import (
    BadSignatureError,
    PayloadTooLargeError,
    TruncatedError,
    UnknownOverlayError,
)

VERSION = 0x02
OVERLAY_ID_LEN = 20
HEADER_LEN = 1 + OVERLAY_ID_LEN + 1 + 32 + 8 + 4
ENVELOPE_OVERHEAD = HEADER_LEN + keys.SIGNATURE_LEN  # 130
MAX_PAYLOAD = 1 << 24


@dataclass(frozen=True)
class OverlayId:
    """20-byte overlay identifier, stable for a given registered name."""

    id: bytes

    def __post_init__(self):
        if len(self.id) != OVERLAY_ID_LEN:
            raise ValueError("overlay id must be 20 bytes")

    @classmethod
    def from_name(cls, name: str) -> "OverlayId":
        return cls(hashlib.sha256(name.encode("utf-8")).digest()[:OVERLAY_ID_LEN])

    def __hash__(self):
        return hash(self.id)


class AddressKind(IntEnum):
    UDP = 0
    SIM = 1


_ADDRESS_LEN = {AddressKind.UDP: 6, AddressKind.SIM: 8}


@dataclass(frozen=True)
class TransportAddress:
    """Kind plus kind-specific opaque address bytes.

    udp: 4-byte IPv4 address + 2-byte port. sim: 8-byte node index.
    """

    kind: AddressKind
    address: bytes

    def __post_init__(self):
        if len(self.address) != _ADDRESS_LEN[self.kind]:
            raise ValueError(f"{self.kind.name} address must be "
                             f"{_ADDRESS_LEN[self.kind]} bytes")

    @classmethod
    def udp(cls, host: str, port: int) -> "TransportAddress":
        packed = bytes(int(p) for p in host.split("."))
        return cls(AddressKind.UDP, packed + struct.pack(">H", port))

    @classmethod
    def sim(cls, node_index: int) -> "TransportAddress":
        return cls(AddressKind.SIM, struct.pack(">Q", node_index))

    def as_udp(self) -> tuple[str, int]:
        host = ".".join(str(b) for b in self.address[:4])
        (port,) = struct.unpack(">H", self.address[4:6])
        return host, port

    def as_sim_index(self) -> int:
        (idx,) = struct.unpack(">Q", self.address)
        return idx

    def pack(self) -> bytes:
        return bytes([self.kind]) + struct.pack(">H", len(self.address)) + self.address

    @classmethod
    def unpack(cls, buf: bytes, offset: int = 0) -> tuple["TransportAddress", int]:
        if len(buf) < offset + 3:
            raise TruncatedError("address header")
        kind = AddressKind(buf[offset])
        (ln,) = struct.unpack_from(">H", buf, offset + 1)
        end = offset + 3 + ln
        if len(buf) < end:
            raise TruncatedError("address body")
        return cls(kind, bytes(buf[offset + 3:end])), end

    def __repr__(self):
        if self.kind == AddressKind.UDP:
            host, port = self.as_udp()
            return f"udp:{host}:{port}"
        return f"sim:{self.as_sim_index()}"


@dataclass(frozen=True)
class Envelope:
    """A decoded, signature-checked message."""

    overlay: OverlayId
    msg_type: int
    sender_key: bytes
    seq: int
    payload: bytes
    version: int = VERSION

    def encoded_size(self) -> int:
        return len(self.payload) + ENVELOPE_OVERHEAD


def encode_envelope(e: Envelope, signer: keys.KeyPair) -> bytes:
    """Serialize and sign. Deterministic for fixed inputs."""
    if len(e.payload) >= MAX_PAYLOAD:
        raise PayloadTooLargeError(f"payload of {len(e.payload)} bytes")
    if e.sender_key != signer.public:
        raise ValueError("sender_key does not match signing key")
    head = struct.pack(
        f">B{OVERLAY_ID_LEN}sB32sQI",
        e.version,
        e.overlay.id,
        e.msg_type,
        e.sender_key,
        e.seq,
        len(e.payload),
    )
    body = head + e.payload
    return body + signer.sign(body)


def decode_envelope(b: bytes, known_overlays: Iterable[OverlayId]) -> Envelope:
    """Parse and verify one datagram.

    Raises TruncatedError, UnknownOverlayError or BadSignatureError; all
    three mean "drop without reply".
    """
    if len(b) < ENVELOPE_OVERHEAD:
        raise TruncatedError(f"{len(b)} bytes")
    version, overlay_id, msg_type, sender_key, seq, length = struct.unpack_from(
        f">B{OVERLAY_ID_LEN}sB32sQI", b, 0
    )
    if version != VERSION:
        raise TruncatedError(f"unsupported version {version:#x}")
    if len(b) != ENVELOPE_OVERHEAD + length:
        raise TruncatedError(f"declared {length}, carried {len(b) - ENVELOPE_OVERHEAD}")
    overlay = OverlayId(overlay_id)
    if overlay not in set(known_overlays):
        raise UnknownOverlayError(overlay_id.hex())
    signed = b[: HEADER_LEN + length]
    signature = b[HEADER_LEN + length:]
    if not keys.verify(sender_key, signature, signed):
        raise BadSignatureError(sender_key.hex()[:16])
    return Envelope(
        overlay=overlay,
        msg_type=msg_type,
        sender_key=sender_key,
        seq=seq,
        payload=bytes(b[HEADER_LEN:HEADER_LEN + length]),
        version=version,
    )
