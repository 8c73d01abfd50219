"""Onion-routed covert channels: circuits, relays, hidden services."""

from .cells import CELL_MSG_BASE, Cell, CellType, is_cell_msg_type
from .circuits import AnonService, Circuit, CircuitState, ExitHandle
from .hidden import (
    GOSSIP_TAG_RAW,
    GOSSIP_TAG_RENDEZVOUS,
    GOSSIP_TAG_REVOCATION,
    E2eChannel,
    HiddenServices,
    RendezvousInfo,
)
from .relays import eligible_relays, select_relays

__all__ = [
    "CELL_MSG_BASE",
    "Cell",
    "CellType",
    "is_cell_msg_type",
    "AnonService",
    "Circuit",
    "CircuitState",
    "ExitHandle",
    "GOSSIP_TAG_RAW",
    "GOSSIP_TAG_RENDEZVOUS",
    "GOSSIP_TAG_REVOCATION",
    "E2eChannel",
    "HiddenServices",
    "RendezvousInfo",
    "eligible_relays",
    "select_relays",
]
