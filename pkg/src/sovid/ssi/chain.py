"""Pseudonyms: hash-chained attributes, metadata and attestations.

A pseudonym is just a key pair plus an append-only chain of attributes.
Each attribute stores only two hashes: the hash of the preceding attribute
(or of the pseudonym public key, for the first link) and the hash of its
commitment bytes. Metadata points at an attribute by hash and carries the
(name, algorithm, version) triple used to match verification requests;
attestations are third-party signatures over the metadata hash, binding the
attested semantics to one specific commitment and proof protocol.

Mutating any byte anywhere in a shared chain breaks verification, so
attributes cannot be mixed in from other pseudonyms.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import stat
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives import hashes as _hashes

from ..dpki import keys
from ..errors import SsiError, UnknownAlgorithm
from ..zkp import (
    SUPPORTED_ALGORITHMS,
    Commitment,
    Opening,
    commit,
    encode_value,
)

HASH_LEN = 32
DEFAULT_VERSION = "version 3"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _lp(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


def _read_lp(buf: bytes, off: int) -> tuple[str, int]:
    (ln,) = struct.unpack_from(">H", buf, off)
    end = off + 2 + ln
    return buf[off + 2:end].decode("utf-8"), end


@dataclass(frozen=True)
class Attribute:
    prev_hash: bytes
    public_data_hash: bytes

    def serialize(self) -> bytes:
        return self.prev_hash + self.public_data_hash

    def digest(self) -> bytes:
        return sha256(self.serialize())

    @classmethod
    def unpack(cls, b: bytes) -> "Attribute":
        if len(b) != 2 * HASH_LEN:
            raise SsiError("attribute must be 64 bytes")
        return cls(bytes(b[:HASH_LEN]), bytes(b[HASH_LEN:]))


@dataclass(frozen=True)
class Metadata:
    attribute_hash: bytes
    name: str
    algorithm: str
    version: str
    valid_from: Optional[int] = None
    valid_until: Optional[int] = None
    extra: tuple[tuple[str, str], ...] = ()

    def triple(self) -> tuple[str, str, str]:
        return (self.name, self.algorithm, self.version)

    def pack(self) -> bytes:
        flags = (1 if self.valid_from is not None else 0) | (
            2 if self.valid_until is not None else 0)
        out = self.attribute_hash + _lp(self.name) + _lp(self.algorithm)
        out += _lp(self.version) + bytes([flags])
        if self.valid_from is not None:
            out += struct.pack(">Q", self.valid_from)
        if self.valid_until is not None:
            out += struct.pack(">Q", self.valid_until)
        items = sorted(self.extra)
        out += struct.pack(">H", len(items))
        for k, v in items:
            out += _lp(k) + _lp(v)
        return out

    @classmethod
    def unpack(cls, b: bytes) -> "Metadata":
        try:
            attribute_hash = bytes(b[:HASH_LEN])
            name, off = _read_lp(b, HASH_LEN)
            algorithm, off = _read_lp(b, off)
            version, off = _read_lp(b, off)
            flags = b[off]
            off += 1
            valid_from = valid_until = None
            if flags & 1:
                (valid_from,) = struct.unpack_from(">Q", b, off)
                off += 8
            if flags & 2:
                (valid_until,) = struct.unpack_from(">Q", b, off)
                off += 8
            (count,) = struct.unpack_from(">H", b, off)
            off += 2
            extra = []
            for _ in range(count):
                k, off = _read_lp(b, off)
                v, off = _read_lp(b, off)
                extra.append((k, v))
            if off != len(b):
                raise SsiError("metadata trailer")
        except (struct.error, IndexError, UnicodeDecodeError) as exc:
            raise SsiError(f"bad metadata: {exc}") from exc
        return cls(attribute_hash, name, algorithm, version,
                   valid_from, valid_until, tuple(extra))

    def digest(self) -> bytes:
        return sha256(self.pack())


@dataclass(frozen=True)
class Attestation:
    metadata_hash: bytes
    attester_key: bytes
    signature: bytes

    @classmethod
    def create(cls, metadata_hash: bytes, attester: keys.KeyPair) -> "Attestation":
        return cls(metadata_hash, attester.public, attester.sign(metadata_hash))

    def verify(self) -> bool:
        return keys.verify(self.attester_key, self.signature, self.metadata_hash)

    def pack(self) -> bytes:
        return self.metadata_hash + self.attester_key + self.signature

    @classmethod
    def unpack(cls, b: bytes) -> "Attestation":
        if len(b) != 128:
            raise SsiError("attestation must be 128 bytes")
        return cls(bytes(b[:32]), bytes(b[32:64]), bytes(b[64:]))


def chain_anchor(pseudonym_key: bytes) -> bytes:
    return sha256(pseudonym_key)


def verify_chain(pseudonym_key: bytes, attributes: list[Attribute]) -> bool:
    """Structural integrity: first link anchored to the key, hashes linked."""
    expected = chain_anchor(pseudonym_key)
    for attribute in attributes:
        if attribute.prev_hash != expected:
            return False
        expected = attribute.digest()
    return True


class Pseudonym:
    """One identity: key pair, attribute chain and private openings."""

    def __init__(self, keypair: keys.KeyPair):
        self.keypair = keypair
        self.chain: list[Attribute] = []
        self.metadata: list[Metadata] = []          # parallel to chain
        self.attestations: dict[bytes, list[Attestation]] = {}
        self.openings: dict[int, Opening] = {}
        self.commitments: dict[int, bytes] = {}
        self.whitelist: dict[bytes, set[bytes]] = {}  # attribute_hash -> verifiers

    @classmethod
    def create(cls, seed: Optional[bytes] = None) -> "Pseudonym":
        return cls(keys.generate_keypair(seed))

    @property
    def public_key(self) -> bytes:
        return self.keypair.public

    def add_attribute(self, name: str, algorithm: str,
                      version: str = DEFAULT_VERSION,
                      value: Union[int, str, bytes] = 0,
                      valid_from: Optional[int] = None,
                      valid_until: Optional[int] = None,
                      extra: tuple[tuple[str, str], ...] = (),
                      rng=None) -> tuple[Attribute, Metadata]:
        """Flow A.1: commit to a value and append the claim to the chain."""
        if algorithm not in SUPPORTED_ALGORITHMS:
            raise UnknownAlgorithm(algorithm)
        encoded = encode_value(value)
        commitment, opening = commit(encoded, rng=rng)
        prev = self.chain[-1].digest() if self.chain else chain_anchor(self.public_key)
        attribute = Attribute(prev_hash=prev,
                              public_data_hash=sha256(commitment.point))
        metadata = Metadata(attribute_hash=attribute.digest(), name=name,
                            algorithm=algorithm, version=version,
                            valid_from=valid_from, valid_until=valid_until,
                            extra=extra)
        index = len(self.chain)
        self.chain.append(attribute)
        self.metadata.append(metadata)
        self.openings[index] = opening
        self.commitments[index] = commitment.point
        return attribute, metadata

    def match_request(self, name: str, algorithm: str,
                      version: str) -> Optional[int]:
        """Most recent chain index whose metadata triple matches, if any."""
        wanted = (name, algorithm, version)
        for index in range(len(self.chain) - 1, -1, -1):
            if self.metadata[index].triple() == wanted:
                return index
        return None

    def attach_attestation(self, attestation: Attestation) -> bool:
        if not attestation.verify():
            return False
        if not any(m.digest() == attestation.metadata_hash for m in self.metadata):
            return False
        bucket = self.attestations.setdefault(attestation.metadata_hash, [])
        if attestation not in bucket:
            bucket.append(attestation)
        return True

    def attestations_for(self, index: int) -> list[Attestation]:
        return list(self.attestations.get(self.metadata[index].digest(), ()))

    def attesters_of(self, index: int) -> set[bytes]:
        """Which keys signed for this attribute (web-of-trust exposure)."""
        return {a.attester_key for a in self.attestations_for(index)}

    def whitelist_verifier(self, index: int, verifier_key: bytes) -> None:
        attr_hash = self.chain[index].digest()
        self.whitelist.setdefault(attr_hash, set()).add(verifier_key)

    def is_whitelisted(self, index: int, verifier_key: bytes) -> bool:
        attr_hash = self.chain[index].digest()
        return verifier_key in self.whitelist.get(attr_hash, ())

    def commitment(self, index: int) -> Commitment:
        return Commitment(self.commitments[index])

    def opening(self, index: int) -> Opening:
        return self.openings[index]


# -- persistence -------------------------------------------------------------

def _storage_key(seed: bytes) -> bytes:
    return HKDF(algorithm=_hashes.SHA256(), length=32, salt=None,
                info=b"opening-store").derive(seed)


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def _unb64(s: str) -> bytes:
    return base64.b64decode(s.encode("ascii"))


def save_pseudonym(p: Pseudonym, path: str) -> None:
    """Append-only record file; openings are encrypted under the key seed."""
    cipher = ChaCha20Poly1305(_storage_key(p.keypair.private))
    lines = []
    for index, attribute in enumerate(p.chain):
        lines.append({"type": "attribute", "i": index,
                      "data": _b64(attribute.serialize())})
        lines.append({"type": "metadata", "i": index,
                      "data": _b64(p.metadata[index].pack())})
        opening = p.openings.get(index)
        if opening is not None:
            blob = struct.pack(">32s32s", opening.value.to_bytes(32, "big"),
                               opening.randomness.to_bytes(32, "big"))
            nonce = os.urandom(12)
            lines.append({"type": "opening", "i": index,
                          "nonce": _b64(nonce),
                          "data": _b64(cipher.encrypt(nonce, blob, None))})
        commitment = p.commitments.get(index)
        if commitment is not None:
            lines.append({"type": "commitment", "i": index,
                          "data": _b64(commitment)})
    for bucket in p.attestations.values():
        for att in bucket:
            lines.append({"type": "attestation", "data": _b64(att.pack())})
    flags = stat.S_IRUSR | stat.S_IWUSR
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, flags)
    with os.fdopen(fd, "w") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def load_pseudonym(keypair: keys.KeyPair, path: str) -> Pseudonym:
    p = Pseudonym(keypair)
    cipher = ChaCha20Poly1305(_storage_key(keypair.private))
    attributes: dict[int, Attribute] = {}
    metadata: dict[int, Metadata] = {}
    with open(path) as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            line = json.loads(raw)
            kind = line["type"]
            if kind == "attribute":
                attributes[line["i"]] = Attribute.unpack(_unb64(line["data"]))
            elif kind == "metadata":
                metadata[line["i"]] = Metadata.unpack(_unb64(line["data"]))
            elif kind == "opening":
                blob = cipher.decrypt(_unb64(line["nonce"]),
                                      _unb64(line["data"]), None)
                value = int.from_bytes(blob[:32], "big")
                randomness = int.from_bytes(blob[32:64], "big")
                p.openings[line["i"]] = Opening(value, randomness)
            elif kind == "commitment":
                p.commitments[line["i"]] = _unb64(line["data"])
            elif kind == "attestation":
                att = Attestation.unpack(_unb64(line["data"]))
                bucket = p.attestations.setdefault(att.metadata_hash, [])
                if att not in bucket:
                    bucket.append(att)
    for index in sorted(attributes):
        p.chain.append(attributes[index])
        p.metadata.append(metadata[index])
    if not verify_chain(p.public_key, p.chain):
        raise SsiError(f"stored chain fails verification: {path}")
    return p
