"""Decentralized PKI: key pairs, message signatures, peers and blacklists."""

from .keys import (
    PUBLIC_KEY_LEN,
    SEED_LEN,
    SIGNATURE_LEN,
    KeyPair,
    generate_keypair,
    load_or_create_key,
    sign,
    verify,
)
from .peers import (
    CONNECTION_CAP,
    NEIGHBORHOOD_TARGET,
    RTT_SAMPLE_CAP,
    Blacklist,
    Peer,
    PeerTable,
)

__all__ = [
    "PUBLIC_KEY_LEN",
    "SEED_LEN",
    "SIGNATURE_LEN",
    "KeyPair",
    "generate_keypair",
    "load_or_create_key",
    "sign",
    "verify",
    "CONNECTION_CAP",
    "NEIGHBORHOOD_TARGET",
    "RTT_SAMPLE_CAP",
    "Blacklist",
    "Peer",
    "PeerTable",
]
