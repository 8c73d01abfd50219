"""Payload codecs for the overlay control messages.

One message type byte per envelope; payloads are fixed struct layouts with
length-prefixed variable parts. Anything that fails to parse is treated as a
drop by the caller.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from ..errors import TruncatedError
from ..wire.envelope import TransportAddress


class MsgType(IntEnum):
    PING = 0x00
    PONG = 0x01
    INTRO_REQUEST = 0x02
    INTRO_RESPONSE = 0x03
    PUNCTURE_REQUEST = 0x04
    PUNCTURE = 0x05
    GOSSIP = 0x06
    # 0x10..0x17 are circuit cells (see anon.cells)
    REVOCATION_QUERY = 0x20
    REVOCATION_RESPONSE = 0x21
    SSI_DIRECT = 0x30


@dataclass(frozen=True)
class Ping:
    nonce: bytes  # 8 bytes

    def pack(self) -> bytes:
        return self.nonce

    @classmethod
    def unpack(cls, b: bytes) -> "Ping":
        if len(b) != 8:
            raise TruncatedError("ping")
        return cls(bytes(b))


@dataclass(frozen=True)
class Pong:
    nonce: bytes
    claimed_min_rtt_ms: int  # advertised RTT floor; 0 = no claim

    def pack(self) -> bytes:
        return self.nonce + struct.pack(">H", min(0xFFFF, self.claimed_min_rtt_ms))

    @classmethod
    def unpack(cls, b: bytes) -> "Pong":
        if len(b) != 10:
            raise TruncatedError("pong")
        return cls(bytes(b[:8]), struct.unpack(">H", b[8:])[0])


@dataclass(frozen=True)
class IntroRequest:
    nonce: bytes

    def pack(self) -> bytes:
        return self.nonce

    @classmethod
    def unpack(cls, b: bytes) -> "IntroRequest":
        if len(b) != 8:
            raise TruncatedError("intro request")
        return cls(bytes(b))


@dataclass(frozen=True)
class IntroResponse:
    nonce: bytes
    requester_addr: TransportAddress   # the address the responder saw
    responder_addr: TransportAddress   # the responder's own reachable address
    introduced_key: Optional[bytes] = None
    introduced_addr: Optional[TransportAddress] = None

    def pack(self) -> bytes:
        flags = 1 if self.introduced_key is not None else 0
        out = self.nonce + bytes([flags])
        out += self.requester_addr.pack() + self.responder_addr.pack()
        if flags:
            out += self.introduced_key + self.introduced_addr.pack()
        return out

    @classmethod
    def unpack(cls, b: bytes) -> "IntroResponse":
        if len(b) < 9:
            raise TruncatedError("intro response")
        nonce, flags = bytes(b[:8]), b[8]
        requester_addr, off = TransportAddress.unpack(b, 9)
        responder_addr, off = TransportAddress.unpack(b, off)
        introduced_key = introduced_addr = None
        if flags & 1:
            if len(b) < off + 32:
                raise TruncatedError("introduced key")
            introduced_key = bytes(b[off:off + 32])
            introduced_addr, off = TransportAddress.unpack(b, off + 32)
        if off != len(b):
            raise TruncatedError("intro response trailer")
        return cls(nonce, requester_addr, responder_addr,
                   introduced_key, introduced_addr)


@dataclass(frozen=True)
class PunctureRequest:
    """Sent to the introduced peer, carrying the original requester."""

    target_key: bytes
    target_addr: TransportAddress

    def pack(self) -> bytes:
        return self.target_key + self.target_addr.pack()

    @classmethod
    def unpack(cls, b: bytes) -> "PunctureRequest":
        if len(b) < 35:
            raise TruncatedError("puncture request")
        key = bytes(b[:32])
        addr, off = TransportAddress.unpack(b, 32)
        if off != len(b):
            raise TruncatedError("puncture request trailer")
        return cls(key, addr)


@dataclass(frozen=True)
class Puncture:
    nonce: bytes

    def pack(self) -> bytes:
        return self.nonce

    @classmethod
    def unpack(cls, b: bytes) -> "Puncture":
        if len(b) != 8:
            raise TruncatedError("puncture")
        return cls(bytes(b))
