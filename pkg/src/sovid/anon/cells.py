"""Circuit cell framing.

A cell is the unit of circuit traffic, carried as the payload of a wire
envelope whose msg_type is 0x10 plus the cell type:

    circuit_id  4 bytes
    cell_type   1 byte
    length      2 bytes big-endian
    body        length bytes

Data-bearing bodies are onion-encrypted; handshake bodies are not.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from ..errors import TruncatedError

CELL_MSG_BASE = 0x10
MAX_BODY = 0xFFFF


class CellType(IntEnum):
    CREATE = 0
    CREATED = 1
    EXTEND = 2
    EXTENDED = 3
    DATA = 4
    DESTROY = 5
    INTRO_ESTABLISH = 6
    RENDEZVOUS = 7


@dataclass(frozen=True)
class Cell:
    circuit_id: bytes  # 4 bytes
    cell_type: CellType
    body: bytes

    def pack(self) -> bytes:
        if len(self.body) > MAX_BODY:
            raise ValueError("cell body too large")
        return (self.circuit_id + bytes([self.cell_type])
                + struct.pack(">H", len(self.body)) + self.body)

    @property
    def msg_type(self) -> int:
        return CELL_MSG_BASE + int(self.cell_type)

    @classmethod
    def unpack(cls, payload: bytes) -> "Cell":
        if len(payload) < 7:
            raise TruncatedError("cell header")
        circuit_id = bytes(payload[:4])
        try:
            cell_type = CellType(payload[4])
        except ValueError as exc:
            raise TruncatedError("cell type") from exc
        (length,) = struct.unpack(">H", payload[5:7])
        if len(payload) != 7 + length:
            raise TruncatedError("cell length")
        return cls(circuit_id, cell_type, bytes(payload[7:]))


def is_cell_msg_type(msg_type: int) -> bool:
    return CELL_MSG_BASE <= msg_type < CELL_MSG_BASE + 8
