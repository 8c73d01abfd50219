"""Peer discovery, churn handling and push gossip."""

from .discovery import (
    DROP_AFTER_MS,
    PING_AFTER_MS,
    PING_GAP_MS,
    Discovery,
)
from .gossip import GossipItem, GossipStore
from .messages import (
    IntroRequest,
    IntroResponse,
    MsgType,
    Ping,
    Pong,
    Puncture,
    PunctureRequest,
)

__all__ = [
    "DROP_AFTER_MS",
    "PING_AFTER_MS",
    "PING_GAP_MS",
    "Discovery",
    "GossipItem",
    "GossipStore",
    "IntroRequest",
    "IntroResponse",
    "MsgType",
    "Ping",
    "Pong",
    "Puncture",
    "PunctureRequest",
]
