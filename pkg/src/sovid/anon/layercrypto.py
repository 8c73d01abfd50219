"""Per-hop and end-to-end encryption for circuit traffic.

Each hop holds a fresh 32-byte key from an ephemeral X25519 exchange run
during the telescoped handshake. Cells are protected with ChaCha20-Poly1305
per layer; the nonce is (circuit_id ‖ direction ‖ counter), with counters
advancing in lockstep at both ends of a hop. Authentication per layer makes
any tampering along the path a deterministic decrypt failure at the next
relay.

An end-to-end channel key between two endpoints (hidden-service client and
service) is derived the same way from a second, endpoint-only exchange, so
the bridging relay never sees plaintext.
"""

from __future__ import annotations

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives import hashes

KEY_LEN = 32
TAG_LEN = 16

FORWARD = 0
BACKWARD = 1


class LayerError(Exception):
    """Authenticated decryption failed; the circuit must be destroyed."""


def ephemeral_keypair(rng) -> tuple[X25519PrivateKey, bytes]:
    """Deterministic-for-rng ephemeral X25519 pair (private, raw public)."""
    priv = X25519PrivateKey.from_private_bytes(rng.randbytes(KEY_LEN))
    pub = priv.public_key().public_bytes_raw()
    return priv, pub


def derive_key(priv: X25519PrivateKey, peer_pub: bytes, label: bytes) -> bytes:
    shared = priv.exchange(X25519PublicKey.from_public_bytes(peer_pub))
    return HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=None,
                info=label).derive(shared)


def hop_key(priv: X25519PrivateKey, peer_pub: bytes) -> bytes:
    return derive_key(priv, peer_pub, b"hop-key")


def channel_key(priv: X25519PrivateKey, peer_pub: bytes) -> bytes:
    return derive_key(priv, peer_pub, b"channel-key")


def _nonce(circuit_id: bytes, direction: int, counter: int) -> bytes:
    return circuit_id + bytes([direction]) + counter.to_bytes(7, "big")


def seal(key: bytes, circuit_id: bytes, direction: int, counter: int,
         plaintext: bytes) -> bytes:
    return ChaCha20Poly1305(key).encrypt(
        _nonce(circuit_id, direction, counter), plaintext, None)


def open_layer(key: bytes, circuit_id: bytes, direction: int, counter: int,
               ciphertext: bytes) -> bytes:
    try:
        return ChaCha20Poly1305(key).decrypt(
            _nonce(circuit_id, direction, counter), ciphertext, None)
    except InvalidTag as exc:
        raise LayerError("layer authentication failed") from exc


def seal_box(recipient_pub: bytes, plaintext: bytes, rng) -> bytes:
    """One-shot anonymous encryption to a published X25519 key."""
    eph_priv, eph_pub = ephemeral_keypair(rng)
    key = derive_key(eph_priv, recipient_pub, b"sealed-box" + eph_pub)
    return eph_pub + ChaCha20Poly1305(key).encrypt(b"\x00" * 12, plaintext, None)


def open_box(recipient_priv: X25519PrivateKey, blob: bytes) -> bytes:
    if len(blob) < KEY_LEN + TAG_LEN:
        raise LayerError("sealed box too short")
    eph_pub = blob[:KEY_LEN]
    key = derive_key(recipient_priv, eph_pub, b"sealed-box" + eph_pub)
    try:
        return ChaCha20Poly1305(key).decrypt(b"\x00" * 12, blob[KEY_LEN:], None)
    except InvalidTag as exc:
        raise LayerError("sealed box authentication failed") from exc
