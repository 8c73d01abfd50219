"""Peer records, the bounded peer table, and the node-local blacklist.

A peer is a public key plus whatever we currently know about reaching and
trusting it: transport addresses, liveness timestamps, a bounded RTT sample
history and the key that introduced it. The table actively fills up to
`neighborhood_target` peers and accepts at most `connection_cap` in total.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Deque, Iterable, Optional

if TYPE_CHECKING:  # wire depends on dpki.keys; keep this one annotation-only
    from ..wire.envelope import TransportAddress

RTT_SAMPLE_CAP = 32
NEIGHBORHOOD_TARGET = 20
CONNECTION_CAP = 30
WALK_CANDIDATE_CAP = 64


@dataclass
class Peer:
    key: bytes
    addresses: list[TransportAddress] = field(default_factory=list)
    last_received: int = 0
    last_ping_sent: int = -1
    rtt_samples: Deque[tuple[int, float]] = field(
        default_factory=lambda: deque(maxlen=RTT_SAMPLE_CAP))
    introduced_by: Optional[bytes] = None
    claimed_min_rtt: Optional[float] = None
    liveness_pings: int = 0   # pings sent since last_received
    relay_failures: int = 0   # consecutive circuit failures through this peer
    walk_earned: bool = False  # answered a probe we initiated ourselves

    def add_address(self, addr: TransportAddress) -> None:
        if addr not in self.addresses:
            self.addresses.append(addr)

    def address(self) -> TransportAddress:
        return self.addresses[-1]

    def add_rtt_sample(self, ts: int, rtt_ms: float) -> None:
        self.rtt_samples.append((ts, rtt_ms))

    def median_rtt(self) -> Optional[float]:
        if not self.rtt_samples:
            return None
        values = sorted(rtt for _, rtt in self.rtt_samples)
        mid = len(values) // 2
        if len(values) % 2:
            return values[mid]
        return (values[mid - 1] + values[mid]) / 2

    def min_rtt(self) -> Optional[float]:
        if not self.rtt_samples:
            return None
        return min(rtt for _, rtt in self.rtt_samples)


class Blacklist:
    """Keys this node refuses to talk to, in either direction."""

    def __init__(self) -> None:
        self._keys: set[bytes] = set()

    def blacklist(self, key: bytes) -> None:
        self._keys.add(key)

    def is_blacklisted(self, key: bytes) -> bool:
        return key in self._keys

    def __contains__(self, key: bytes) -> bool:
        return key in self._keys


class PeerTable:
    """Verified peers (capped), pending walk candidates and bootstrap list."""

    def __init__(
        self,
        bootstrap: Iterable[TransportAddress] = (),
        neighborhood_target: int = NEIGHBORHOOD_TARGET,
        connection_cap: int = CONNECTION_CAP,
    ) -> None:
        self.verified: dict[bytes, Peer] = {}
        self.walk_candidates: Deque[tuple[TransportAddress, Optional[bytes]]] = deque(
            maxlen=WALK_CANDIDATE_CAP)
        self.bootstrap: list[TransportAddress] = list(bootstrap)
        self.neighborhood_target = neighborhood_target
        self.connection_cap = connection_cap
        self.suspects: set[bytes] = set()  # latency-fraud exclusions

    def __len__(self) -> int:
        return len(self.verified)

    def get(self, key: bytes) -> Optional[Peer]:
        return self.verified.get(key)

    def observe(self, key: bytes, addr: TransportAddress, now: int,
                introduced_by: Optional[bytes] = None) -> Optional[Peer]:
        """Register proof of life from `key` at `addr`.

        Returns the peer record, or None when the table is full and no slot
        could be reclaimed (the message itself is still processed).
        """
        peer = self.verified.get(key)
        if peer is not None:
            peer.add_address(addr)
            peer.last_received = now
            peer.liveness_pings = 0
            return peer
        if key in self.suspects:
            return None
        if len(self.verified) >= self.connection_cap and not self._reclaim_slot():
            return None
        peer = Peer(key=key, last_received=now, introduced_by=introduced_by)
        peer.add_address(addr)
        self.verified[key] = peer
        return peer

    def _reclaim_slot(self) -> bool:
        # Prefer dropping a peer that keeps failing as a relay.
        worst = None
        for peer in self.verified.values():
            if peer.relay_failures >= 3 and (
                    worst is None or peer.relay_failures > worst.relay_failures):
                worst = peer
        if worst is None:
            return False
        del self.verified[worst.key]
        return True

    def remove(self, key: bytes) -> Optional[Peer]:
        return self.verified.pop(key, None)

    def mark_suspect(self, key: bytes) -> None:
        self.suspects.add(key)
        self.verified.pop(key, None)

    def push_candidate(self, addr: TransportAddress,
                       introduced_by: Optional[bytes]) -> None:
        if any(addr == a for a, _ in self.walk_candidates):
            return
        self.walk_candidates.append((addr, introduced_by))

    def pop_candidate(self) -> Optional[tuple[TransportAddress, Optional[bytes]]]:
        if not self.walk_candidates:
            return None
        return self.walk_candidates.popleft()

    def walk_targets(self) -> list[TransportAddress]:
        """Sampling population for a walk step: verified peers ∪ bootstrap."""
        targets = [p.address() for p in self.verified.values() if p.addresses]
        targets.extend(self.bootstrap)
        return targets

    def earned_count(self) -> int:
        """Peers this node connected to actively (the 20-peer neighborhood).

        Entries pushed at us by others (punctures, unsolicited requests) fill
        the passive slots up to the connection cap but do not satisfy the
        walker, so identity floods cannot talk a node out of searching.
        """
        return sum(1 for p in self.verified.values() if p.walk_earned)

    def known_addresses(self, key: bytes) -> list[TransportAddress]:
        peer = self.verified.get(key)
        return list(peer.addresses) if peer else []
