"""Node-attached storage service: audit log plus revocation machinery.

The register role (revocation mode 1) is an ordinary node answering status
queries about its own attestations, deliberately not a special server, so
the centralization trade-off stays demonstrable. Mode 2 entries arrive via
the gossip overlay; mode 3 needs no service state at all.
"""

from __future__ import annotations

import struct
from typing import Callable, Optional

from ..anon.hidden import GOSSIP_TAG_REVOCATION
from ..dpki import keys
from ..errors import StoreError, TruncatedError, UnauthorizedRevoker
from ..overlay.messages import MsgType
from ..wire.envelope import TransportAddress
from . import audit as audit_mod
from .revocation import (
    RevocationEntry,
    RevocationMode,
    RevocationSet,
    RevocationStatus,
    check_validity_terms,
)


class StoreService:
    def __init__(self, node):
        self.node = node
        self.revocations = RevocationSet()
        self.audit_records: list[audit_mod.AuditRecord] = []
        self.audit_log: Optional[audit_mod.AuditLog] = None
        self._pending: dict[tuple[bytes, bytes], list] = {}
        node.register_handler(MsgType.REVOCATION_QUERY, self._on_query)
        node.register_handler(MsgType.REVOCATION_RESPONSE, self._on_response)
        node.gossip.subscribe(self._on_gossip_item)

    def open_audit_log(self, path: str) -> None:
        self.audit_log = audit_mod.AuditLog(path, self.node.identity.private)

    # -- audit -----------------------------------------------------------

    def record_audit(self, record: audit_mod.AuditRecord) -> Optional[bytes]:
        self.audit_records.append(record)
        if self.audit_log is not None:
            return self.audit_log.append(record)
        return None

    # -- revocation ---------------------------------------------------------

    def revoke(self, attester: keys.KeyPair, metadata_hash: bytes,
               mode: RevocationMode) -> Optional[RevocationEntry]:
        """Revoke an attestation made by `attester` under the given mode."""
        if mode is RevocationMode.VALIDITY_TERMS:
            return None  # expiry comes from metadata alone; nothing to send
        entry = RevocationEntry.create(attester, metadata_hash, self.node.now())
        self.revocations.add(entry)
        if mode is RevocationMode.SHARED_LOG:
            self.node.gossip.push(bytes([GOSSIP_TAG_REVOCATION]) + entry.pack(),
                                  origin=attester)
        return entry

    def check_revocation(self, metadata_hash: bytes, mode: RevocationMode,
                         now: int, attester_key: Optional[bytes] = None,
                         valid_from: Optional[int] = None,
                         valid_until: Optional[int] = None,
                         register_addr: Optional[TransportAddress] = None,
                         callback: Optional[Callable] = None) -> RevocationStatus:
        """Modes 2 and 3 answer immediately; mode 1 answers via callback."""
        if mode is RevocationMode.VALIDITY_TERMS:
            return check_validity_terms(valid_from, valid_until, now)
        if attester_key is None:
            raise StoreError("attester key required for modes 1 and 2")
        if mode is RevocationMode.SHARED_LOG:
            if self.revocations.is_revoked(metadata_hash, attester_key):
                return RevocationStatus.REVOKED
            return RevocationStatus.VALID
        # Mode 1: ask the attester's register node.
        if self.revocations.is_revoked(metadata_hash, attester_key):
            return RevocationStatus.REVOKED
        if callback is None:
            raise StoreError("mode-1 check needs a callback")
        if register_addr is None:
            peer = self.node.peers.get(attester_key)
            if peer is None or not peer.addresses:
                self.node.scheduler.call_later(
                    0, lambda: callback(RevocationStatus.UNKNOWN, None))
                return RevocationStatus.UNKNOWN
            register_addr = peer.address()
        key = (metadata_hash, attester_key)
        waiters = self._pending.setdefault(key, [])
        timer = self.node.scheduler.call_later(
            self.node.config.register_timeout_ms,
            lambda: self._expire_query(key))
        waiters.append((callback, timer))
        payload = metadata_hash + attester_key
        self.node.send_payload(register_addr, MsgType.REVOCATION_QUERY, payload)
        return RevocationStatus.UNKNOWN

    def _expire_query(self, key) -> None:
        waiters = self._pending.pop(key, [])
        for callback, timer in waiters:
            timer.cancel()
            callback(RevocationStatus.UNKNOWN, None)

    # -- handlers ----------------------------------------------------------

    def _on_query(self, env, src: TransportAddress) -> None:
        if len(env.payload) != 64:
            return
        metadata_hash = bytes(env.payload[:32])
        entry = self.revocations.get(metadata_hash, self.node.identity.public)
        status = RevocationStatus.REVOKED if entry else RevocationStatus.VALID
        body = metadata_hash + bytes([1 if entry else 0])
        if entry is not None:
            body += entry.pack()
        _ = status
        self.node.send_payload(src, MsgType.REVOCATION_RESPONSE, body)

    def _on_response(self, env, src: TransportAddress) -> None:
        if len(env.payload) < 33:
            return
        metadata_hash = bytes(env.payload[:32])
        revoked = env.payload[32] == 1
        entry = None
        if revoked:
            try:
                entry = RevocationEntry.unpack(env.payload[33:])
            except TruncatedError:
                return
            if entry.attester_key != env.sender_key or not entry.verify():
                return  # only the original attester's register may revoke
            try:
                self.revocations.add(entry)
            except StoreError:
                pass
        key = (metadata_hash, env.sender_key)
        waiters = self._pending.pop(key, [])
        status = RevocationStatus.REVOKED if revoked else RevocationStatus.VALID
        for callback, timer in waiters:
            timer.cancel()
            callback(status, entry)

    def _on_gossip_item(self, item) -> None:
        if not item.payload or item.payload[0] != GOSSIP_TAG_REVOCATION:
            return
        try:
            entry = RevocationEntry.unpack(item.payload[1:])
        except TruncatedError:
            return
        if entry.attester_key != item.origin:
            return
        try:
            self.revocations.add(entry)
        except (StoreError, UnauthorizedRevoker):
            pass
