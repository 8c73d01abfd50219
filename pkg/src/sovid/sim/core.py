"""Deterministic discrete-event network simulator.

One global time-ordered event queue drives full protocol stacks attached to
in-memory endpoints. Identical seed and configuration give an identical
event trace: every random draw comes from per-node RNGs seeded from the run
seed, latencies come from the matrix, and ties in the queue break on a
monotone sequence number. Simulated components never see wall time.

Every datagram is accounted for in a per-run ledger: delivered exactly once,
or dropped by an explicit rule (unpunctured NAT, bad address), with
in-flight messages tracked so the ledger balances at any instant.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from ..config import NodeConfig
from ..dpki import keys
from ..node import Node, NodeBehavior
from ..runtime import TimerHandle
from ..wire.envelope import ENVELOPE_OVERHEAD, AddressKind, TransportAddress
from . import latency as latency_mod


class SimClock:
    def __init__(self) -> None:
        self._now = 0

    def now_ms(self) -> int:
        return self._now

    def advance_to(self, t: int) -> None:
        if t > self._now:
            self._now = t


class SimScheduler:
    """Global heap shared by all nodes; deterministic tie-breaking."""

    def __init__(self, clock: SimClock):
        self._clock = clock
        self._heap: list[tuple[int, int, TimerHandle]] = []
        self._seq = 0

    def call_at(self, when_ms: int, fn: Callable[[], None]) -> TimerHandle:
        handle = TimerHandle(max(when_ms, self._clock.now_ms()), fn)
        self._seq += 1
        heapq.heappush(self._heap, (handle.when_ms, self._seq, handle))
        return handle

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> TimerHandle:
        return self.call_at(self._clock.now_ms() + max(0, int(delay_ms)), fn)

    def pop_due(self) -> Optional[TimerHandle]:
        while self._heap:
            when, _, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._clock.advance_to(when)
            return handle
        return None

    def peek_time(self) -> Optional[int]:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class CaptureRecord:
    time_ms: int
    src: int
    dst: int
    msg_type: int
    size: int
    payload: Optional[bytes] = None


@dataclass
class TrafficLedger:
    sent: int = 0
    delivered: int = 0
    dropped_nat: int = 0
    dropped_bad_addr: int = 0
    in_flight: int = 0
    bytes_sent: int = 0

    def balanced(self) -> bool:
        return self.sent == (self.delivered + self.dropped_nat
                             + self.dropped_bad_addr + self.in_flight)


class TrafficCapture:
    def __init__(self, keep_records: bool = False, keep_payloads: bool = False):
        self.keep_records = keep_records
        self.keep_payloads = keep_payloads
        self.records: list[CaptureRecord] = []
        self.ledger = TrafficLedger()

    def record(self, time_ms: int, src: int, dst: int, msg_type: int,
               data: bytes) -> None:
        if self.keep_records:
            self.records.append(CaptureRecord(
                time_ms, src, dst, msg_type, len(data),
                bytes(data) if self.keep_payloads else None))


def _derive_seed(master: int, label: bytes, index: int) -> bytes:
    return hashlib.sha256(
        label + master.to_bytes(8, "big", signed=False) + index.to_bytes(8, "big")
    ).digest()


class SimEndpoint:
    def __init__(self, network: "SimNetwork", index: int):
        self._network = network
        self.index = index
        self._addr = TransportAddress.sim(index)
        self._cb = None

    def send(self, addr: TransportAddress, data: bytes) -> None:
        self._network.transmit(self.index, addr, data)

    def set_receive_callback(self, cb) -> None:
        self._cb = cb

    def local_address(self) -> TransportAddress:
        return self._addr

    def close(self) -> None:
        self._cb = None

    def deliver(self, src_addr: TransportAddress, data: bytes) -> None:
        if self._cb is not None:
            self._cb(src_addr, data)


class SimNetwork:
    """N full stacks over a shared event queue and latency matrix."""

    def __init__(self, n: int, seed: int,
                 config: Optional[NodeConfig] = None,
                 matrix: Optional[np.ndarray] = None,
                 bootstrap_indices: Iterable[int] = (0,),
                 nat_nodes: Iterable[int] = (),
                 behaviors: Optional[dict[int, NodeBehavior]] = None,
                 positions: Optional[list[int]] = None,
                 keep_records: bool = False,
                 keep_payloads: bool = False,
                 node_configs: Optional[dict[int, NodeConfig]] = None):
        self.n = n
        self.seed = seed
        self.clock = SimClock()
        self.scheduler = SimScheduler(self.clock)
        self.capture = TrafficCapture(keep_records, keep_payloads)
        self.positions = positions if positions is not None else list(range(n))
        if matrix is None:
            matrix = latency_mod.synthetic_matrix(max(self.positions) + 1, seed)
        self.matrix = matrix
        self.nat_nodes = set(nat_nodes)
        self._nat_opened: set[tuple[int, int]] = set()  # (nat node, peer)
        self.endpoints: list[SimEndpoint] = []
        self.nodes: list[Node] = []
        self.muted: set[int] = set()

        base = config or NodeConfig()
        bootstrap_addrs = [TransportAddress.sim(i) for i in bootstrap_indices]
        behaviors = behaviors or {}
        for i in range(n):
            endpoint = SimEndpoint(self, i)
            self.endpoints.append(endpoint)
            cfg = node_configs.get(i) if node_configs else None
            if cfg is None:
                boots = [a for a in bootstrap_addrs if a.as_sim_index() != i]
                cfg = dataclasses.replace(base, bootstrap=boots)
            rng = random.Random(_derive_seed(seed, b"node-rng", i))
            keypair = keys.generate_keypair(_derive_seed(seed, b"node-key", i))
            node = Node(cfg, keypair, endpoint, self.clock, self.scheduler,
                        rng, behavior=behaviors.get(i))
            endpoint.set_receive_callback(node.on_datagram)
            self.nodes.append(node)
        self.key_to_index = {node.identity.public: i
                             for i, node in enumerate(self.nodes)}
        self.rng = random.Random(_derive_seed(seed, b"net-rng", 0))

    # -- wiring helpers ----------------------------------------------------

    def create_endpoint(self, node_index: int) -> SimEndpoint:
        return self.endpoints[node_index]

    def start(self, indices: Optional[Iterable[int]] = None) -> None:
        for i in (range(self.n) if indices is None else indices):
            self.nodes[i].start()

    def mute(self, index: int) -> None:
        """The node stops reacting entirely (crash model for churn tests)."""
        self.muted.add(index)

    def seed_neighborhoods(self, k: Optional[int] = None,
                           among: Optional[list[int]] = None,
                           with_rtt_samples: bool = False) -> None:
        """Deterministically pre-converge peer tables.

        Mirrors the steady state of discovery (mutual membership, capped
        tables) without paying for the message exchange, which keeps large
        experiment batches affordable. RTT samples, when requested, are the
        values probing would measure anyway since sim latencies are constant.
        """
        members = among if among is not None else list(range(self.n))
        now = self.clock.now_ms()
        for i in members:
            node = self.nodes[i]
            target = k if k is not None else node.config.neighborhood_target
            others = [j for j in members if j != i]
            want = min(target, len(others))
            chosen = self.rng.sample(others, want)
            for j in chosen:
                self._seed_edge(i, j, now, with_rtt_samples)
                self._seed_edge(j, i, now, with_rtt_samples)

    def _seed_edge(self, i: int, j: int, now: int, with_rtt: bool) -> None:
        node = self.nodes[i]
        other = self.nodes[j]
        peer = node.peers.observe(other.identity.public,
                                  TransportAddress.sim(j), now)
        if peer is None:
            return
        peer.walk_earned = True  # seeded tables model converged steady state
        node.discovery.on_peer_seen(peer)
        if with_rtt and len(peer.rtt_samples) < 3:
            rtt = float(self.link_latency(i, j) + self.link_latency(j, i))
            for _ in range(3 - len(peer.rtt_samples)):
                peer.add_rtt_sample(now, rtt)

    def link_latency(self, src: int, dst: int) -> int:
        return int(self.matrix[self.positions[src]][self.positions[dst]])

    # -- transport -------------------------------------------------------------

    def transmit(self, src: int, addr: TransportAddress, data: bytes) -> None:
        ledger = self.capture.ledger
        ledger.sent += 1
        ledger.bytes_sent += len(data)
        if addr.kind != AddressKind.SIM:
            ledger.dropped_bad_addr += 1
            return
        dst = addr.as_sim_index()
        if not 0 <= dst < self.n:
            ledger.dropped_bad_addr += 1
            return
        msg_type = data[21] if len(data) > 21 else -1
        self.capture.record(self.clock.now_ms(), src, dst, msg_type, data)
        if src in self.nat_nodes:
            self._nat_opened.add((src, dst))
        if dst in self.nat_nodes and (dst, src) not in self._nat_opened:
            ledger.dropped_nat += 1
            return
        delay = self.link_latency(src, dst)
        ledger.in_flight += 1
        src_addr = TransportAddress.sim(src)

        def deliver() -> None:
            ledger.in_flight -= 1
            ledger.delivered += 1
            if dst not in self.muted:
                self.endpoints[dst].deliver(src_addr, data)

        self.scheduler.call_at(self.clock.now_ms() + delay, deliver)

    # -- execution ----------------------------------------------------------

    def step(self) -> bool:
        handle = self.scheduler.pop_due()
        if handle is None:
            return False
        handle.fire()
        return True

    def run_until(self, t_ms: int) -> None:
        while True:
            when = self.scheduler.peek_time()
            if when is None or when > t_ms:
                break
            self.step()
        self.clock.advance_to(t_ms)

    def run_for(self, ms: int) -> None:
        self.run_until(self.clock.now_ms() + ms)

    def run_until_true(self, predicate: Callable[[], bool],
                       timeout_ms: int) -> bool:
        deadline = self.clock.now_ms() + timeout_ms
        if predicate():
            return True
        while True:
            when = self.scheduler.peek_time()
            if when is None or when > deadline:
                break
            self.step()
            if predicate():
                return True
        self.clock.advance_to(min(deadline, self.clock.now_ms()))
        return predicate()

    def node_index(self, public_key: bytes) -> Optional[int]:
        return self.key_to_index.get(public_key)
