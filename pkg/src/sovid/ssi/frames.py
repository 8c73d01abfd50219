"""Identity-layer frames.

All frames share a header of one tag byte plus a 16-byte request id and are
carried either inside a covert channel message or as the payload of a
direct-channel envelope (msg_type 0x30). Proof transcripts travel as
length-prefixed byte strings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import SsiError
from .chain import Attestation, Attribute, Metadata

REQUEST_ID_LEN = 16

VERIFY_REQUEST = 0x01
NO_ATTRIBUTE = 0x02
DISCLOSURE = 0x03
RANGE_PROOF = 0x04
ROUND_COMMIT = 0x05
ROUND_CHALLENGE = 0x06
ROUND_RESPONSE = 0x07
OWNERSHIP_NONCE = 0x08
OWNERSHIP_SIG = 0x09
RESULT = 0x0A
ATTEST_REQUEST = 0x0B
ATTEST_GRANT = 0x0C
REFUSED = 0x0D


def pack_frame(tag: int, request_id: bytes, body: bytes = b"") -> bytes:
    if len(request_id) != REQUEST_ID_LEN:
        raise SsiError("request id must be 16 bytes")
    return bytes([tag]) + request_id + body


def parse_frame(data: bytes) -> tuple[int, bytes, bytes]:
    if len(data) < 1 + REQUEST_ID_LEN:
        raise SsiError("frame too short")
    return data[0], bytes(data[1:17]), bytes(data[17:])


def _lp(raw: bytes) -> bytes:
    return struct.pack(">I", len(raw)) + raw


def _read_lp(buf: bytes, off: int) -> tuple[bytes, int]:
    if len(buf) < off + 4:
        raise SsiError("length prefix")
    (ln,) = struct.unpack_from(">I", buf, off)
    end = off + 4 + ln
    if len(buf) < end:
        raise SsiError("length body")
    return bytes(buf[off + 4:end]), end


@dataclass(frozen=True)
class VerifyRequest:
    name: str
    algorithm: str
    version: str
    params: bytes  # algorithm-specific: range bounds or round count

    def pack(self) -> bytes:
        return (_lp(self.name.encode()) + _lp(self.algorithm.encode())
                + _lp(self.version.encode()) + _lp(self.params))

    @classmethod
    def unpack(cls, b: bytes) -> "VerifyRequest":
        name, off = _read_lp(b, 0)
        algorithm, off = _read_lp(b, off)
        version, off = _read_lp(b, off)
        params, off = _read_lp(b, off)
        if off != len(b):
            raise SsiError("verify request trailer")
        return cls(name.decode(), algorithm.decode(), version.decode(), params)


def pack_range_params(a: int, b: int) -> bytes:
    return struct.pack(">QQ", a, b)


def unpack_range_params(p: bytes) -> tuple[int, int]:
    if len(p) != 16:
        raise SsiError("range params")
    return struct.unpack(">QQ", p)


def pack_rounds_param(rounds: int) -> bytes:
    return struct.pack(">H", rounds)


def unpack_rounds_param(p: bytes) -> int:
    if len(p) != 2:
        raise SsiError("rounds param")
    return struct.unpack(">H", p)[0]


@dataclass(frozen=True)
class Disclosure:
    """Flow B.2 payload: metadata, chain prefix, attestations, commitment.

    The chain prefix carries every attribute up to and including the matched
    one as bare hash pairs; only the matched attribute's commitment bytes
    are included.
    """

    pseudonym_key: bytes
    chain: list[Attribute]
    metadata: Metadata
    attestations: list[Attestation]
    commitment: bytes

    def pack(self) -> bytes:
        out = self.pseudonym_key + struct.pack(">H", len(self.chain))
        for attribute in self.chain:
            out += attribute.serialize()
        out += _lp(self.metadata.pack())
        out += struct.pack(">H", len(self.attestations))
        for attestation in self.attestations:
            out += attestation.pack()
        out += _lp(self.commitment)
        return out

    @classmethod
    def unpack(cls, b: bytes) -> "Disclosure":
        if len(b) < 34:
            raise SsiError("disclosure too short")
        key = bytes(b[:32])
        (count,) = struct.unpack_from(">H", b, 32)
        off = 34
        chain = []
        for _ in range(count):
            chain.append(Attribute.unpack(b[off:off + 64]))
            off += 64
        meta_raw, off = _read_lp(b, off)
        metadata = Metadata.unpack(meta_raw)
        if len(b) < off + 2:
            raise SsiError("attestation count")
        (acount,) = struct.unpack_from(">H", b, off)
        off += 2
        attestations = []
        for _ in range(acount):
            attestations.append(Attestation.unpack(b[off:off + 128]))
            off += 128
        commitment, off = _read_lp(b, off)
        if off != len(b):
            raise SsiError("disclosure trailer")
        return cls(key, chain, metadata, attestations, commitment)


@dataclass(frozen=True)
class AttestRequestBody:
    """Flow A.2 payload from subject to attester."""

    metadata: Metadata
    attribute: Attribute
    commitment: bytes

    def pack(self) -> bytes:
        return (_lp(self.metadata.pack()) + self.attribute.serialize()
                + _lp(self.commitment))

    @classmethod
    def unpack(cls, b: bytes) -> "AttestRequestBody":
        meta_raw, off = _read_lp(b, 0)
        attribute = Attribute.unpack(b[off:off + 64])
        commitment, off = _read_lp(b, off + 64)
        if off != len(b):
            raise SsiError("attest request trailer")
        return cls(Metadata.unpack(meta_raw), attribute, commitment)


def pack_result(ok: bool, reason: str, confidence: float) -> bytes:
    raw = reason.encode()
    return struct.pack(">B d", 1 if ok else 0, confidence) + _lp(raw)


def unpack_result(b: bytes) -> tuple[bool, str, float]:
    if len(b) < 9:
        raise SsiError("result")
    ok, confidence = struct.unpack_from(">B d", b, 0)
    reason, off = _read_lp(b, 9)
    if off != len(b):
        raise SsiError("result trailer")
    return bool(ok), reason.decode(), confidence
