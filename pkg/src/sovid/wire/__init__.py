"""Binary envelope format and connectionless transport adapters."""

from .envelope import (
    ENVELOPE_OVERHEAD,
    MAX_PAYLOAD,
    VERSION,
    AddressKind,
    Envelope,
    OverlayId,
    TransportAddress,
    decode_envelope,
    encode_envelope,
)
from .endpoint import Endpoint, UdpEndpoint, open_endpoint

__all__ = [
    "ENVELOPE_OVERHEAD",
    "MAX_PAYLOAD",
    "VERSION",
    "AddressKind",
    "Envelope",
    "OverlayId",
    "TransportAddress",
    "decode_envelope",
    "encode_envelope",
    "Endpoint",
    "UdpEndpoint",
    "open_endpoint",
]
