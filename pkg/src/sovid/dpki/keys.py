"""Key material and per-message signatures.

One signature scheme is supported: Ed25519 (32-byte public keys, 32-byte
private seeds, 64-byte signatures). Peer identity is the raw public key;
there is no separate hashed peer id.
"""

from __future__ import annotations

import os
import stat
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

PUBLIC_KEY_LEN = 32
SEED_LEN = 32
SIGNATURE_LEN = 64


@dataclass(frozen=True)
class KeyPair:
    """An Ed25519 identity: raw public key plus the private seed."""

    public: bytes
    private: bytes

    def __post_init__(self):
        if len(self.public) != PUBLIC_KEY_LEN or len(self.private) != SEED_LEN:
            raise ValueError("key material must be 32 bytes each")

    def sign(self, message: bytes) -> bytes:
        return _private_from_seed(self.private).sign(message)

    def __repr__(self) -> str:  # never leak the seed in logs
        return f"KeyPair(public={self.public.hex()[:16]}…)"


def generate_keypair(seed: Optional[bytes] = None) -> KeyPair:
    """Create a key pair, deterministically when a 32-byte seed is given."""
    if seed is None:
        seed = os.urandom(SEED_LEN)
    if len(seed) != SEED_LEN:
        raise ValueError("seed must be 32 bytes")
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    public = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public=public, private=seed)


@lru_cache(maxsize=4096)
def _public_from_bytes(public: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public)


@lru_cache(maxsize=64)
def _private_from_seed(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


def sign(seed: bytes, message: bytes) -> bytes:
    return _private_from_seed(seed).sign(message)


def verify(public: bytes, signature: bytes, message: bytes) -> bool:
    if len(public) != PUBLIC_KEY_LEN or len(signature) != SIGNATURE_LEN:
        return False
    try:
        _public_from_bytes(public).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def load_or_create_key(path: str) -> KeyPair:
    """Load a 32-byte raw seed from disk, creating it (mode 0600) if absent."""
    if os.path.exists(path):
        with open(path, "rb") as fh:
            seed = fh.read()
        if len(seed) != SEED_LEN:
            raise ValueError(f"key file {path} is not a 32-byte seed")
        return generate_keypair(seed)
    seed = os.urandom(SEED_LEN)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, stat.S_IRUSR | stat.S_IWUSR)
    try:
        os.write(fd, seed)
    finally:
        os.close(fd)
    return generate_keypair(seed)


def export_private_pem(pair: KeyPair) -> bytes:
    """PEM form of the private key, for interop tooling only."""
    return _private_from_seed(pair.private).private_bytes(
        Encoding.PEM, PrivateFormat.PKCS8, NoEncryption()
    )
