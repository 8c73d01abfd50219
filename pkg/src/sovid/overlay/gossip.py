"""Push gossip with deduplication.

Items are origin-signed and content-addressed (item_id = SHA-256 of the
payload). A node stores and forwards an item the first time it sees it and
ignores duplicates, so a handler observes each item exactly once. Forwarding
happens on the gossip tick to the configured fanout of random verified
peers, which gives flooding its round-based, seconds-scale behavior.
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from dataclasses import dataclass

from ..dpki import keys
from ..errors import TruncatedError

SEEN_CAP = 8192


@dataclass(frozen=True)
class GossipItem:
    item_id: bytes       # sha256(payload)
    payload: bytes
    origin: bytes        # public key of the creator
    signature: bytes     # by origin, over item_id ‖ payload

    @classmethod
    def create(cls, payload: bytes, origin: keys.KeyPair) -> "GossipItem":
        item_id = hashlib.sha256(payload).digest()
        sig = origin.sign(item_id + payload)
        return cls(item_id, payload, origin.public, sig)

    def verify(self) -> bool:
        if hashlib.sha256(self.payload).digest() != self.item_id:
            return False
        return keys.verify(self.origin, self.signature, self.item_id + self.payload)

    def pack(self) -> bytes:
        return (self.item_id + self.origin + self.signature
                + struct.pack(">I", len(self.payload)) + self.payload)

    @classmethod
    def unpack(cls, b: bytes) -> "GossipItem":
        if len(b) < 132:
            raise TruncatedError("gossip item")
        item_id, origin, sig = bytes(b[:32]), bytes(b[32:64]), bytes(b[64:128])
        (ln,) = struct.unpack(">I", b[128:132])
        if len(b) != 132 + ln:
            raise TruncatedError("gossip payload length")
        return cls(item_id, bytes(b[132:]), origin, sig)


class GossipStore:
    """Seen-item bookkeeping: dedup plus the forward queue."""

    def __init__(self, cap: int = SEEN_CAP):
        self._items: OrderedDict[bytes, GossipItem] = OrderedDict()
        self._cap = cap
        self.pending: list[GossipItem] = []

    def __contains__(self, item_id: bytes) -> bool:
        return item_id in self._items

    def get(self, item_id: bytes):
        return self._items.get(item_id)

    def add(self, item: GossipItem) -> bool:
        """Record an item; True when it is new (store + queue for forward)."""
        if item.item_id in self._items:
            return False
        self._items[item.item_id] = item
        while len(self._items) > self._cap:
            self._items.popitem(last=False)
        self.pending.append(item)
        return True

    def drain_pending(self) -> list[GossipItem]:
        out, self.pending = self.pending, []
        return out


class GossipService:
    """Node-attached gossip: receive, dedupe, deliver, batch-forward."""

    def __init__(self, node):
        from .messages import MsgType  # local to avoid import cycles
        self._msg_type = MsgType.GOSSIP
        self.node = node
        self.store = GossipStore()
        self.handlers: list = []
        self._timer = None
        node.register_handler(MsgType.GOSSIP, self._on_gossip)

    def start(self) -> None:
        interval = self.node.config.gossip_interval_ms
        self._timer = self.node.scheduler.call_later(
            self.node.rng.randrange(interval), self._tick)

    def stop(self) -> None:
        if self._timer is not None:
            self._timer.cancel()

    def subscribe(self, handler) -> None:
        """handler(item) is invoked at most once per item_id."""
        self.handlers.append(handler)

    def push(self, payload: bytes, origin=None) -> GossipItem:
        """Create, sign and inject a new item originating at this node."""
        item = GossipItem.create(payload, origin or self.node.identity)
        self.gossip_push(item)
        return item

    def gossip_push(self, item: GossipItem, fanout=None) -> None:
        """First sight: store, deliver locally and queue for forwarding."""
        if not item.verify():
            return
        if self.store.add(item):
            self._deliver(item)

    def handle_gossip(self, item: GossipItem) -> None:
        self.gossip_push(item)

    def _deliver(self, item: GossipItem) -> None:
        for handler in self.handlers:
            handler(item)

    def _on_gossip(self, env, src) -> None:
        try:
            item = GossipItem.unpack(env.payload)
        except TruncatedError:
            return
        if self.node.blacklist.is_blacklisted(item.origin):
            return
        self.gossip_push(item)

    def _tick(self) -> None:
        self.flush()
        self._timer = self.node.scheduler.call_later(
            self.node.config.gossip_interval_ms, self._tick)

    def flush(self) -> None:
        """Forward queued items to min(fanout, |verified|) random peers."""
        items = self.store.drain_pending()
        if not items:
            return
        peers = [p for p in self.node.peers.verified.values() if p.addresses]
        if not peers:
            self.store.pending.extend(items)  # retry once neighbors exist
            return
        fanout = self.node.config.gossip_fanout
        for item in items:
            k = min(fanout, len(peers))
            chosen = self.node.rng.sample(peers, k)
            data = item.pack()
            for peer in chosen:
                self.node.send_payload(peer.address(), self._msg_type, data)
