"""Signed audit transcripts of verification sessions.

The verifier captures everything the subject disclosed — metadata, the
attribute chain prefix, attestations, the commitment, and the full proof
transcript — together with the outcome, and signs the record. Anyone holding
the record can replay every check offline (chain structure, attestation
signatures, the proof itself, validity terms at the recorded time) and must
reach the same outcome; no network access is needed.

Records live in a verifier-local log file of length-prefixed encrypted
records, each followed by a 32-byte running hash of the file so far. The
latest head hash is mirrored in a sidecar file so truncation at a record
boundary, which leaves a self-consistent prefix, is still detectable.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives import hashes as _hashes

from ..dpki import keys
from ..errors import AuditInvalid
from ..ssi.chain import Attestation, Attribute, Metadata, verify_chain
from ..zkp import rangeproof, sigma
from ..zkp.pedersen import Commitment
from ..ssi import frames

SESSION_ID_LEN = 16
_CHAIN_SEED = b"sovid-audit-v1"

PROOF_RANGE = 1
PROOF_SIGMA = 2


@dataclass(frozen=True)
class DisclosedBundle:
    """What the subject shared, as needed for offline replay."""

    pseudonym_key: bytes
    chain: list[Attribute]
    metadata: Metadata
    attestations: list[Attestation]
    commitment: bytes
    proof_kind: int             # PROOF_RANGE or PROOF_SIGMA
    proof_params: bytes         # range bounds or round count
    proof_transcript: bytes

    def pack(self) -> bytes:
        disclosure = frames.Disclosure(self.pseudonym_key, self.chain,
                                       self.metadata, self.attestations,
                                       self.commitment)
        raw = disclosure.pack()
        out = struct.pack(">I", len(raw)) + raw
        out += bytes([self.proof_kind])
        out += struct.pack(">I", len(self.proof_params)) + self.proof_params
        out += struct.pack(">I", len(self.proof_transcript)) + self.proof_transcript
        return out

    @classmethod
    def unpack(cls, b: bytes) -> tuple["DisclosedBundle", int]:
        (ln,) = struct.unpack_from(">I", b, 0)
        disclosure = frames.Disclosure.unpack(b[4:4 + ln])
        off = 4 + ln
        proof_kind = b[off]
        off += 1
        (pln,) = struct.unpack_from(">I", b, off)
        params = bytes(b[off + 4:off + 4 + pln])
        off += 4 + pln
        (tln,) = struct.unpack_from(">I", b, off)
        transcript = bytes(b[off + 4:off + 4 + tln])
        off += 4 + tln
        return cls(disclosure.pseudonym_key, disclosure.chain,
                   disclosure.metadata, disclosure.attestations,
                   disclosure.commitment, proof_kind, params, transcript), off


def pack_sigma_transcript(records: list[sigma.RoundRecord]) -> bytes:
    out = struct.pack(">H", len(records))
    for r in records:
        z1, z2 = r.response if r.response else (0, 0)
        out += r.commitment + bytes([r.challenge])
        out += z1.to_bytes(32, "big") + z2.to_bytes(32, "big")
    return out


def unpack_sigma_transcript(b: bytes) -> list[sigma.RoundRecord]:
    (count,) = struct.unpack_from(">H", b, 0)
    off = 2
    records = []
    for _ in range(count):
        t = bytes(b[off:off + 33])
        challenge = b[off + 33]
        z1 = int.from_bytes(b[off + 34:off + 66], "big")
        z2 = int.from_bytes(b[off + 66:off + 98], "big")
        records.append(sigma.RoundRecord(t, challenge, (z1, z2)))
        off += 98
    if off != len(b):
        raise AuditInvalid("sigma transcript trailer")
    return records


@dataclass(frozen=True)
class AuditRecord:
    session_id: bytes
    verifier_key: bytes
    subject_key: bytes
    timestamp: int
    outcome: bool
    reason: str
    confidence: float
    bundle: DisclosedBundle
    verifier_signature: bytes = b""

    def _signed_part(self) -> bytes:
        reason_raw = self.reason.encode()
        out = self.session_id + self.verifier_key + self.subject_key
        out += struct.pack(">QBd", self.timestamp, 1 if self.outcome else 0,
                           self.confidence)
        out += struct.pack(">H", len(reason_raw)) + reason_raw
        out += self.bundle.pack()
        return out

    def pack(self) -> bytes:
        return self._signed_part() + self.verifier_signature

    @classmethod
    def unpack(cls, b: bytes) -> "AuditRecord":
        try:
            session_id = bytes(b[:16])
            verifier_key = bytes(b[16:48])
            subject_key = bytes(b[48:80])
            timestamp, outcome, confidence = struct.unpack_from(">QBd", b, 80)
            off = 80 + 17
            (rlen,) = struct.unpack_from(">H", b, off)
            reason = b[off + 2:off + 2 + rlen].decode()
            off += 2 + rlen
            bundle, used = DisclosedBundle.unpack(b[off:])
            off += used
            signature = bytes(b[off:])
            if len(signature) != keys.SIGNATURE_LEN:
                raise AuditInvalid("signature length")
        except (struct.error, IndexError, UnicodeDecodeError) as exc:
            raise AuditInvalid(f"malformed record: {exc}") from exc
        return cls(session_id, verifier_key, subject_key, timestamp,
                   bool(outcome), reason, confidence, bundle, signature)


def record_audit(session_id: bytes, verifier: keys.KeyPair, subject_key: bytes,
                 timestamp: int, outcome: bool, reason: str, confidence: float,
                 bundle: DisclosedBundle) -> AuditRecord:
    record = AuditRecord(session_id, verifier.public, subject_key, timestamp,
                         outcome, reason, confidence, bundle)
    signature = verifier.sign(record._signed_part())
    return AuditRecord(session_id, verifier.public, subject_key, timestamp,
                       outcome, reason, confidence, bundle, signature)


def replay_outcome(record: AuditRecord) -> tuple[bool, str]:
    """Re-run every disclosed check offline; returns (outcome, reason)."""
    bundle = record.bundle
    if not verify_chain(bundle.pseudonym_key, bundle.chain):
        return False, "chain-invalid"
    if not bundle.chain:
        return False, "chain-invalid"
    matched = bundle.chain[-1]
    if bundle.metadata.attribute_hash != matched.digest():
        return False, "chain-invalid"
    if matched.public_data_hash != hashlib.sha256(bundle.commitment).digest():
        return False, "chain-invalid"
    if not bundle.attestations or not all(
            a.metadata_hash == bundle.metadata.digest() and a.verify()
            for a in bundle.attestations):
        return False, "attestation-invalid"
    if (bundle.metadata.valid_until is not None
            and record.timestamp > bundle.metadata.valid_until):
        return False, "expired"
    if (bundle.metadata.valid_from is not None
            and record.timestamp < bundle.metadata.valid_from):
        return False, "expired"
    if bundle.proof_kind == PROOF_RANGE:
        a, b = frames.unpack_range_params(bundle.proof_params)
        if not rangeproof.verify_range(bundle.commitment, a, b,
                                       bundle.proof_transcript):
            return False, "proof-failed"
        return True, "ok"
    if bundle.proof_kind == PROOF_SIGMA:
        rounds = frames.unpack_rounds_param(bundle.proof_params)
        transcript = unpack_sigma_transcript(bundle.proof_transcript)
        if not sigma.verify_transcript(bundle.commitment, transcript, rounds):
            return False, "proof-failed"
        return True, "ok"
    return False, "proof-failed"


def verify_audit(record: AuditRecord) -> bool:
    """Offline check: signature valid and replay reproduces the outcome."""
    if not keys.verify(record.verifier_key, record.verifier_signature,
                       record._signed_part()):
        return False
    outcome, reason = replay_outcome(record)
    return outcome == record.outcome and (record.outcome or reason == record.reason)


# -- log file -----------------------------------------------------------------

def _log_key(seed: bytes) -> bytes:
    return HKDF(algorithm=_hashes.SHA256(), length=32, salt=None,
                info=b"audit-log").derive(seed)


class AuditLog:
    """Append-only encrypted record log with a running hash chain."""

    def __init__(self, path: str, key_seed: bytes):
        self.path = path
        self._cipher = ChaCha20Poly1305(_log_key(key_seed))
        self._head = self._recover_head()
        self._count = 0

    def _recover_head(self) -> bytes:
        head = hashlib.sha256(_CHAIN_SEED).digest()
        if os.path.exists(self.path):
            ok, head_found, count = scan_log(self.path)
            if not ok:
                raise AuditInvalid(f"existing log fails verification: {self.path}")
            self._count = count
            return head_found
        return head

    def append(self, record: AuditRecord) -> bytes:
        nonce = os.urandom(12)
        ciphertext = nonce + self._cipher.encrypt(nonce, record.pack(), None)
        self._head = hashlib.sha256(self._head + ciphertext).digest()
        with open(self.path, "ab") as fh:
            fh.write(struct.pack(">I", len(ciphertext)))
            fh.write(ciphertext)
            fh.write(self._head)
        with open(self.path + ".head", "w") as fh:
            fh.write(self._head.hex() + "\n")
        self._count += 1
        return self._head

    @property
    def head(self) -> bytes:
        return self._head

    def records(self) -> list[AuditRecord]:
        out = []
        for blob in iter_log_blobs(self.path):
            nonce, ct = blob[:12], blob[12:]
            try:
                out.append(AuditRecord.unpack(self._cipher.decrypt(nonce, ct, None)))
            except InvalidTag as exc:
                raise AuditInvalid("log record decryption failed") from exc
        return out


def iter_log_blobs(path: str):
    with open(path, "rb") as fh:
        data = fh.read()
    head = hashlib.sha256(_CHAIN_SEED).digest()
    off = 0
    while off < len(data):
        if len(data) < off + 4:
            raise AuditInvalid("truncated length prefix")
        (ln,) = struct.unpack_from(">I", data, off)
        end = off + 4 + ln + 32
        if len(data) < end:
            raise AuditInvalid("truncated record")
        blob = data[off + 4:off + 4 + ln]
        head = hashlib.sha256(head + blob).digest()
        if data[off + 4 + ln:end] != head:
            raise AuditInvalid("hash chain mismatch")
        yield blob
        off = end


def scan_log(path: str, expected_head: Optional[bytes] = None
             ) -> tuple[bool, bytes, int]:
    """Structural verification; returns (ok, final head, record count).

    With expected_head (or the sidecar .head file) the check also catches
    truncation at a record boundary.
    """
    head = hashlib.sha256(_CHAIN_SEED).digest()
    count = 0
    try:
        for _ in iter_log_blobs(path):
            count += 1
    except AuditInvalid:
        return False, head, count
    # Recompute the head by re-walking (iter validates each step).
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0
    while off < len(data):
        (ln,) = struct.unpack_from(">I", data, off)
        head = hashlib.sha256(head + data[off + 4:off + 4 + ln]).digest()
        off += 4 + ln + 32
    if expected_head is None and os.path.exists(path + ".head"):
        with open(path + ".head") as fh:
            expected_head = bytes.fromhex(fh.read().strip())
    if expected_head is not None and head != expected_head:
        return False, head, count
    return True, head, count
