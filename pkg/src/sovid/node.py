"""A full protocol stack bound to one endpoint.

The node owns the serialized event context: every inbound datagram and every
timer runs on it, so protocol state needs no locking. Dispatch order for a
datagram is decode (length, overlay, signature), blacklist, replay window,
peer bookkeeping, then the per-msg_type handler. Failures at any stage drop
the datagram silently.

Adversarial behavior for simulations is injected through a NodeBehavior
strategy rather than subclassing, keeping the honest protocol logic in one
place.
"""

from __future__ import annotations

import random
from collections import defaultdict
from typing import Callable, Optional

from .anon.circuits import AnonService
from .anon.hidden import HiddenServices
from .config import NodeConfig
from .dpki import keys
from .dpki.peers import Blacklist, PeerTable
from .errors import DecodeError
from .overlay.discovery import Discovery
from .overlay.gossip import GossipService
from .runtime import Clock, Scheduler
from .ssi.service import SsiService
from .store.service import StoreService
from .wire.endpoint import Endpoint
from .wire.envelope import Envelope, OverlayId, TransportAddress, decode_envelope, encode_envelope

REPLAY_WINDOW = 64


class NodeBehavior:
    """Hook points consulted by the honest protocol handlers."""

    def intro_pool(self, node: "Node", requester_key: bytes) -> list[bytes]:
        return list(node.peers.verified.keys())

    def pong_claim(self, node: "Node", sender_key: bytes,
                   src: TransportAddress) -> int:
        return node.discovery.honest_claim(sender_key)

    def pong_delay_ms(self, node: "Node") -> int:
        return 0

    def intro_delay_ms(self, node: "Node") -> int:
        return 0

    def relay_cells(self, node: "Node") -> bool:
        return True


class Node:
    def __init__(self, config: NodeConfig, keypair: keys.KeyPair,
                 endpoint: Endpoint, clock: Clock, scheduler: Scheduler,
                 rng: random.Random,
                 behavior: Optional[NodeBehavior] = None):
        self.config = config
        self.identity = keypair
        self.endpoint = endpoint
        self.clock = clock
        self.scheduler = scheduler
        self.rng = rng
        self.behavior = behavior or NodeBehavior()
        self.overlay_id = OverlayId.from_name(config.overlay_name)
        self.known_overlays = frozenset({self.overlay_id})
        self.peers = PeerTable(bootstrap=config.bootstrap,
                               neighborhood_target=config.neighborhood_target,
                               connection_cap=config.connection_cap)
        self.blacklist = Blacklist()
        self.counters: dict[str, int] = defaultdict(int)
        self.handlers: dict[int, Callable] = {}
        self._seq = 0
        self._replay: dict[bytes, list] = {}
        self._peer_drop_listeners: list[Callable] = []

        self.discovery = Discovery(self)
        self.gossip = GossipService(self)
        self.storage = StoreService(self)
        if config.anon_enabled:
            self.anon: Optional[AnonService] = AnonService(self)
            self.hidden: Optional[HiddenServices] = HiddenServices(self, self.anon)
        else:
            self.anon = None
            self.hidden = None
        self.ssi = SsiService(self)
        self._started = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self.discovery.start()
        self.gossip.start()
        if self.anon is not None:
            self.anon.start()

    def stop(self) -> None:
        if not self._started:
            return
        self._started = False
        self.discovery.stop()
        self.gossip.stop()
        if self.anon is not None:
            self.anon.stop()

    def now(self) -> int:
        return self.clock.now_ms()

    def my_address(self) -> TransportAddress:
        return self.endpoint.local_address()

    # -- registration --------------------------------------------------------

    def register_handler(self, msg_type: int, handler: Callable) -> None:
        if msg_type in self.handlers:
            raise ValueError(f"duplicate handler for msg_type {msg_type:#x}")
        self.handlers[msg_type] = handler

    def add_peer_drop_listener(self, listener: Callable) -> None:
        self._peer_drop_listeners.append(listener)

    def on_peer_dropped(self, peer) -> None:
        self.counters["peers_dropped"] += 1
        for listener in self._peer_drop_listeners:
            listener(peer)

    # -- sending ----------------------------------------------------------

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def send_payload(self, addr: TransportAddress, msg_type: int,
                     payload: bytes) -> None:
        envelope = Envelope(overlay=self.overlay_id, msg_type=int(msg_type),
                            sender_key=self.identity.public,
                            seq=self.next_seq(), payload=payload)
        self.endpoint.send(addr, encode_envelope(envelope, self.identity))
        self.counters["sent"] += 1

    # -- receiving -----------------------------------------------------------

    def on_datagram(self, src: TransportAddress, data: bytes) -> None:
        """Entry point; must be invoked on the node's event context."""
        try:
            env = decode_envelope(data, self.known_overlays)
        except DecodeError:
            self.counters["dropped_decode"] += 1
            return
        if env.sender_key == self.identity.public:
            return
        if self.blacklist.is_blacklisted(env.sender_key):
            self.counters["dropped_blacklist"] += 1
            return
        if not self._replay_ok(env.sender_key, env.seq):
            self.counters["dropped_replay"] += 1
            return
        peer = self.peers.observe(env.sender_key, src, self.now(),
                                  introduced_by=self.discovery.introduced_by_hint(src))
        if peer is not None:
            self.discovery.on_peer_seen(peer)
        handler = self.handlers.get(env.msg_type)
        if handler is None:
            self.counters["dropped_unknown_type"] += 1
            return
        self.counters["dispatched"] += 1
        handler(env, src)

    def _replay_ok(self, sender: bytes, seq: int) -> bool:
        state = self._replay.get(sender)
        if state is None:
            self._replay[sender] = [seq, 1]
            return True
        max_seq, mask = state
        if seq > max_seq:
            shift = seq - max_seq
            mask = ((mask << shift) | 1) & ((1 << REPLAY_WINDOW) - 1)
            state[0], state[1] = seq, mask
            return True
        offset = max_seq - seq
        if offset >= REPLAY_WINDOW:
            return False
        bit = 1 << offset
        if mask & bit:
            return False
        state[1] = mask | bit
        return True

    # -- blacklist -------------------------------------------------------------

    def blacklist_key(self, key: bytes) -> None:
        """From now on: no envelopes accepted, never selected for anything."""
        self.blacklist.blacklist(key)
        if self.peers.remove(key) is not None:
            self.counters["blacklist_evictions"] += 1
