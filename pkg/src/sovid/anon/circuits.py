"""Telescoped circuit construction, cell relaying and the circuit pool.

An initiator extends a circuit one relay at a time: CREATE to the first
relay, then EXTEND cells that the current exit turns into a CREATE for the
next relay, with each answer (CREATED / EXTENDED) carrying the relay's
ephemeral key share and an identity signature over the handshake. Each hop
yields a fresh symmetric key, and data cells cross exactly one encryption
layer per relay in hop order.

The same circuit id travels the full path (legs are keyed by the previous
hop's address), which lets AEAD nonces be (circuit_id, direction, counter)
with counters advancing in lockstep at both ends of every hop.

Relays keep per-leg state only: hop key, neighbor addresses, counters and an
optional exit role (introduction point binding, pending rendezvous cookie,
or a bridge to a second leg). A node maintains a pool of ready circuits of
the configured hop count for its own traffic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from ..dpki import keys
from ..errors import CircuitError, InsufficientCandidatesError, TruncatedError
from ..wire.envelope import TransportAddress
from . import layercrypto
from .cells import CELL_MSG_BASE, Cell, CellType, is_cell_msg_type
from .relays import select_relays

# Exit-side frame tags (first byte of a fully peeled forward body).
EXIT_APP = 0x00
EXIT_INTRO_FORWARD = 0x01
BACK_INTRO_DELIVER = 0x02
E2E_CHUNK = 0x03
BACK_RENDEZVOUS_READY = 0x04

E2E_CHUNK_BYTES = 4096
RENDEZVOUS_PENDING_CAP = 256


class CircuitState(Enum):
    EXTENDING = "extending"
    READY = "ready"
    CLOSED = "closed"


@dataclass
class CircuitHop:
    peer_key: bytes
    key: bytes
    fwd_counter: int = 0
    bwd_counter: int = 0


@dataclass
class Circuit:
    circuit_id: bytes
    planned: list[tuple[bytes, TransportAddress]]  # (relay key, address)
    created_at: int
    state: CircuitState = CircuitState.EXTENDING
    hops: list[CircuitHop] = field(default_factory=list)
    ready_at: Optional[int] = None
    pool_member: bool = False
    on_ready: list[Callable[["Circuit"], None]] = field(default_factory=list)
    on_closed: list[Callable[["Circuit"], None]] = field(default_factory=list)
    on_backward_data: Optional[Callable[[bytes], None]] = None
    _pending_eph: Optional[object] = None
    _pending_index: int = 0
    _timeout = None

    @property
    def first_addr(self) -> TransportAddress:
        return self.planned[0][1]

    @property
    def exit_key(self) -> bytes:
        return self.planned[-1][0]

    def hop_count(self) -> int:
        return len(self.planned)

    def build_latency_ms(self) -> Optional[int]:
        if self.ready_at is None:
            return None
        return self.ready_at - self.created_at


@dataclass
class RelayEntry:
    circuit_id: bytes
    hop_key: bytes
    prev_addr: TransportAddress
    next_addr: Optional[TransportAddress] = None
    fwd_counter: int = 0
    bwd_counter: int = 0
    intro_service: Optional[bytes] = None
    bridge: Optional["RelayEntry"] = None
    pending_cookie: Optional[bytes] = None


class AnonService:
    """Per-node circuit engine: initiator, relay and pool in one place."""

    def __init__(self, node):
        self.node = node
        self.circuits: dict[bytes, Circuit] = {}
        self._relay: dict[tuple[TransportAddress, bytes], RelayEntry] = {}
        self._relay_next: dict[tuple[TransportAddress, bytes], RelayEntry] = {}
        self._intro_registry: dict[bytes, RelayEntry] = {}
        self._pending_rendezvous: dict[bytes, RelayEntry] = {}
        self.exit_payload_handler: Optional[Callable] = None
        self.intro_deliver_handler: Optional[Callable[[bytes], None]] = None
        self.build_latencies: list[tuple[int, int]] = []  # (hops, ms)
        self._pool_timer = None
        for cell_type in CellType:
            node.register_handler(CELL_MSG_BASE + int(cell_type), self._on_cell)

    # -- lifecycle -------------------------------------------------------

    def start(self) -> None:
        interval = self.node.config.maintenance_interval_ms
        self._pool_timer = self.node.scheduler.call_later(
            self.node.rng.randrange(interval), self._pool_tick)

    def stop(self) -> None:
        if self._pool_timer is not None:
            self._pool_timer.cancel()
        for circuit in list(self.circuits.values()):
            self._close_circuit(circuit, notify=False)

    # -- circuit construction ---------------------------------------------

    def select_path(self, hops: int, exclude=(), exit_key: Optional[bytes] = None
                    ) -> list[tuple[bytes, TransportAddress]]:
        peers = select_relays(hops, self.node.peers, self.node.rng,
                              blacklist=self.node.blacklist, exclude=exclude,
                              exit_key=exit_key)
        return [(p.key, p.address()) for p in peers]

    def build_circuit(self, hops: Optional[int] = None,
                      path: Optional[list[tuple[bytes, TransportAddress]]] = None,
                      pool_member: bool = False,
                      on_ready=None, on_closed=None) -> Circuit:
        """Start building; completion is signalled through on_ready."""
        if path is None:
            path = self.select_path(hops or self.node.config.hop_count)
        if not 1 <= len(path) <= 3:
            raise CircuitError("hop count must be between 1 and 3")
        circuit_id = self.node.rng.randbytes(4)
        while circuit_id in self.circuits:
            circuit_id = self.node.rng.randbytes(4)
        circuit = Circuit(circuit_id=circuit_id, planned=path,
                          created_at=self.node.now(), pool_member=pool_member)
        if on_ready:
            circuit.on_ready.append(on_ready)
        if on_closed:
            circuit.on_closed.append(on_closed)
        self.circuits[circuit_id] = circuit
        self._send_create(circuit)
        return circuit

    def _send_create(self, circuit: Circuit) -> None:
        priv, pub = layercrypto.ephemeral_keypair(self.node.rng)
        circuit._pending_eph = priv
        circuit._pending_index = 0
        cell = Cell(circuit.circuit_id, CellType.CREATE, pub)
        self.node.send_payload(circuit.first_addr, cell.msg_type, cell.pack())
        self._arm_timeout(circuit)

    def _send_extend(self, circuit: Circuit) -> None:
        index = len(circuit.hops)
        target_key, target_addr = circuit.planned[index]
        priv, pub = layercrypto.ephemeral_keypair(self.node.rng)
        circuit._pending_eph = priv
        circuit._pending_index = index
        body = target_addr.pack() + target_key + pub
        self._send_forward(circuit, CellType.EXTEND, body)
        self._arm_timeout(circuit)

    def _arm_timeout(self, circuit: Circuit) -> None:
        self._disarm_timeout(circuit)
        circuit._timeout = self.node.scheduler.call_later(
            self.node.config.build_timeout_ms,
            lambda: self._on_build_timeout(circuit))

    def _disarm_timeout(self, circuit: Circuit) -> None:
        if circuit._timeout is not None:
            circuit._timeout.cancel()
            circuit._timeout = None

    def _on_build_timeout(self, circuit: Circuit) -> None:
        if circuit.state is not CircuitState.EXTENDING:
            return
        key, _ = circuit.planned[circuit._pending_index]
        peer = self.node.peers.get(key)
        if peer is not None:
            peer.relay_failures += 1
        self.node.counters["circuit_build_timeouts"] += 1
        self._close_circuit(circuit)

    # -- initiator-side onion I/O -----------------------------------------

    def _send_forward(self, circuit: Circuit, cell_type: CellType,
                      body: bytes) -> None:
        for hop in reversed(circuit.hops):
            body = layercrypto.seal(hop.key, circuit.circuit_id,
                                    layercrypto.FORWARD, hop.fwd_counter, body)
            hop.fwd_counter += 1
        cell = Cell(circuit.circuit_id, cell_type, body)
        self.node.send_payload(circuit.first_addr, cell.msg_type, cell.pack())

    def _unwrap_backward(self, circuit: Circuit, body: bytes) -> bytes:
        for hop in circuit.hops:
            body = layercrypto.open_layer(hop.key, circuit.circuit_id,
                                          layercrypto.BACKWARD, hop.bwd_counter,
                                          body)
            hop.bwd_counter += 1
        return body

    def onion_send(self, circuit: Circuit, payload: bytes) -> None:
        """Send an application payload to the circuit's exit."""
        if circuit.state is not CircuitState.READY:
            raise CircuitError("circuit not ready")
        self._send_forward(circuit, CellType.DATA, bytes([EXIT_APP]) + payload)

    def send_raw(self, circuit: Circuit, body: bytes,
                 cell_type: CellType = CellType.DATA) -> None:
        if circuit.state is not CircuitState.READY:
            raise CircuitError("circuit not ready")
        self._send_forward(circuit, cell_type, body)

    def close_circuit(self, circuit: Circuit) -> None:
        if circuit.state is CircuitState.CLOSED:
            return
        cell = Cell(circuit.circuit_id, CellType.DESTROY, b"")
        self.node.send_payload(circuit.first_addr, cell.msg_type, cell.pack())
        self._close_circuit(circuit)

    def _close_circuit(self, circuit: Circuit, notify: bool = True) -> None:
        self._disarm_timeout(circuit)
        if circuit.state is CircuitState.CLOSED:
            return
        circuit.state = CircuitState.CLOSED
        self.circuits.pop(circuit.circuit_id, None)
        if notify:
            for cb in circuit.on_closed:
                cb(circuit)

    # -- dispatch ----------------------------------------------------------

    def _on_cell(self, env, src: TransportAddress) -> None:
        try:
            cell = Cell.unpack(env.payload)
        except TruncatedError:
            return
        if cell.msg_type != env.msg_type:
            return
        circuit = self.circuits.get(cell.circuit_id)
        if (circuit is not None and src == circuit.first_addr
                and cell.cell_type in (CellType.CREATED, CellType.EXTENDED,
                                       CellType.DATA, CellType.DESTROY)):
            self._on_initiator_cell(circuit, cell)
            return
        if not self.node.behavior.relay_cells(self.node):
            self.node.counters["cells_dropped_by_behavior"] += 1
            return
        entry = self._relay.get((src, cell.circuit_id))
        if entry is not None:
            self._on_relay_forward(entry, cell)
            return
        entry = self._relay_next.get((src, cell.circuit_id))
        if entry is not None:
            self._on_relay_backward(entry, cell)
            return
        if cell.cell_type is CellType.CREATE:
            self._on_create(src, cell)

    # -- relay side --------------------------------------------------------

    def _on_create(self, src: TransportAddress, cell: Cell) -> None:
        if len(cell.body) != 32 or (src, cell.circuit_id) in self._relay:
            return
        initiator_eph = cell.body
        priv, pub = layercrypto.ephemeral_keypair(self.node.rng)
        hop_key = layercrypto.hop_key(priv, initiator_eph)
        entry = RelayEntry(circuit_id=cell.circuit_id, hop_key=hop_key,
                           prev_addr=src)
        self._relay[(src, cell.circuit_id)] = entry
        transcript = b"created" + cell.circuit_id + initiator_eph + pub
        signature = self.node.identity.sign(transcript)
        reply = Cell(cell.circuit_id, CellType.CREATED, pub + signature)
        self.node.send_payload(src, reply.msg_type, reply.pack())

    def _on_relay_forward(self, entry: RelayEntry, cell: Cell) -> None:
        if cell.cell_type is CellType.DESTROY:
            self._destroy_leg(entry, toward_prev=False)
            return
        try:
            body = layercrypto.open_layer(entry.hop_key, entry.circuit_id,
                                          layercrypto.FORWARD,
                                          entry.fwd_counter, cell.body)
        except layercrypto.LayerError:
            self.node.counters["relay_decrypt_failures"] += 1
            self._destroy_leg(entry)
            return
        entry.fwd_counter += 1
        if entry.next_addr is not None:
            out = Cell(entry.circuit_id, cell.cell_type, body)
            self.node.send_payload(entry.next_addr, out.msg_type, out.pack())
            return
        # This relay is the current exit for the circuit.
        if cell.cell_type is CellType.EXTEND:
            self._handle_extend(entry, body)
        elif cell.cell_type is CellType.DATA:
            self._handle_exit_data(entry, body)
        elif cell.cell_type is CellType.RENDEZVOUS:
            self._handle_rendezvous(entry, body)
        elif cell.cell_type is CellType.INTRO_ESTABLISH:
            self._handle_intro_establish(entry, body)

    def _on_relay_backward(self, entry: RelayEntry, cell: Cell) -> None:
        if cell.cell_type is CellType.DESTROY:
            self._destroy_leg(entry, toward_next=False)
            return
        if cell.cell_type is CellType.CREATED and entry.next_addr is not None:
            # Answer to an extend we performed: relay it up as EXTENDED.
            self._send_backward(entry, CellType.EXTENDED, cell.body)
            return
        if cell.cell_type in (CellType.DATA, CellType.EXTENDED):
            self._send_backward(entry, cell.cell_type, cell.body)

    def _send_backward(self, entry: RelayEntry, cell_type: CellType,
                       body: bytes) -> None:
        sealed = layercrypto.seal(entry.hop_key, entry.circuit_id,
                                  layercrypto.BACKWARD, entry.bwd_counter, body)
        entry.bwd_counter += 1
        cell = Cell(entry.circuit_id, cell_type, sealed)
        self.node.send_payload(entry.prev_addr, cell.msg_type, cell.pack())

    def _handle_extend(self, entry: RelayEntry, body: bytes) -> None:
        try:
            next_addr, off = TransportAddress.unpack(body, 0)
        except TruncatedError:
            self._destroy_leg(entry)
            return
        if len(body) != off + 64:
            self._destroy_leg(entry)
            return
        initiator_eph = body[off + 32:off + 64]
        entry.next_addr = next_addr
        self._relay_next[(next_addr, entry.circuit_id)] = entry
        out = Cell(entry.circuit_id, CellType.CREATE, initiator_eph)
        self.node.send_payload(next_addr, out.msg_type, out.pack())

    def _handle_exit_data(self, entry: RelayEntry, body: bytes) -> None:
        if entry.bridge is not None:
            self._send_backward(entry.bridge, CellType.DATA, body)
            return
        if not body:
            return
        tag = body[0]
        if tag == EXIT_INTRO_FORWARD and len(body) >= 33:
            service_key = bytes(body[1:33])
            target = self._intro_registry.get(service_key)
            if target is not None:
                self._send_backward(target, CellType.DATA,
                                    bytes([BACK_INTRO_DELIVER]) + body[33:])
            return
        if tag == EXIT_APP:
            handler = self.exit_payload_handler
            if handler is not None:
                handler(ExitHandle(self, entry), body[1:])

    def _handle_rendezvous(self, entry: RelayEntry, body: bytes) -> None:
        if len(body) < 21:
            return
        flag, cookie = body[0], bytes(body[1:21])
        if flag == 0:
            if len(self._pending_rendezvous) < RENDEZVOUS_PENDING_CAP:
                entry.pending_cookie = cookie
                self._pending_rendezvous[cookie] = entry
            return
        if flag == 1 and len(body) == 53:
            service_eph = bytes(body[21:53])
            partner = self._pending_rendezvous.pop(cookie, None)
            if partner is None:
                return
            partner.pending_cookie = None
            partner.bridge = entry
            entry.bridge = partner
            self._send_backward(partner, CellType.DATA,
                                bytes([BACK_RENDEZVOUS_READY]) + service_eph)

    def _handle_intro_establish(self, entry: RelayEntry, body: bytes) -> None:
        if len(body) != 32 + 20 + 64:
            return
        service_key = bytes(body[:32])
        cookie = bytes(body[32:52])
        signature = bytes(body[52:])
        transcript = (b"intro-establish" + service_key + cookie
                      + self.node.identity.public)
        if not keys.verify(service_key, signature, transcript):
            return
        entry.intro_service = service_key
        self._intro_registry[service_key] = entry

    def _destroy_leg(self, entry: RelayEntry, toward_next: bool = True,
                     toward_prev: bool = True) -> None:
        self._relay.pop((entry.prev_addr, entry.circuit_id), None)
        if entry.next_addr is not None:
            self._relay_next.pop((entry.next_addr, entry.circuit_id), None)
        if entry.intro_service is not None:
            self._intro_registry.pop(entry.intro_service, None)
        if entry.pending_cookie is not None:
            self._pending_rendezvous.pop(entry.pending_cookie, None)
        if entry.bridge is not None:
            partner, entry.bridge = entry.bridge, None
            if partner.bridge is entry:
                partner.bridge = None
                self._destroy_leg(partner)
        cell = Cell(entry.circuit_id, CellType.DESTROY, b"")
        if toward_next and entry.next_addr is not None:
            self.node.send_payload(entry.next_addr, cell.msg_type, cell.pack())
        if toward_prev:
            self.node.send_payload(entry.prev_addr, cell.msg_type, cell.pack())

    # -- initiator-side receive --------------------------------------------

    def _on_initiator_cell(self, circuit: Circuit, cell: Cell) -> None:
        if cell.cell_type is CellType.DESTROY:
            if circuit.state is CircuitState.EXTENDING:
                key, _ = circuit.planned[circuit._pending_index]
                peer = self.node.peers.get(key)
                if peer is not None:
                    peer.relay_failures += 1
            self._close_circuit(circuit)
            return
        if cell.cell_type is CellType.CREATED:
            if circuit.state is CircuitState.EXTENDING and not circuit.hops:
                self._absorb_handshake(circuit, cell.body)
            return
        if cell.cell_type is CellType.EXTENDED:
            if circuit.state is not CircuitState.EXTENDING or not circuit.hops:
                return
            try:
                body = self._unwrap_backward(circuit, cell.body)
            except layercrypto.LayerError:
                self._close_circuit(circuit)
                return
            self._absorb_handshake(circuit, body)
            return
        if cell.cell_type is CellType.DATA:
            try:
                body = self._unwrap_backward(circuit, cell.body)
            except layercrypto.LayerError:
                self._close_circuit(circuit)
                return
            if circuit.on_backward_data is not None:
                circuit.on_backward_data(body)

    def _absorb_handshake(self, circuit: Circuit, body: bytes) -> None:
        if len(body) != 32 + 64 or circuit._pending_eph is None:
            self._close_circuit(circuit)
            return
        relay_eph, signature = bytes(body[:32]), bytes(body[32:])
        target_key, _ = circuit.planned[circuit._pending_index]
        priv = circuit._pending_eph
        my_eph_pub = priv.public_key().public_bytes_raw()
        transcript = b"created" + circuit.circuit_id + my_eph_pub + relay_eph
        if not keys.verify(target_key, signature, transcript):
            self._close_circuit(circuit)
            return
        hop = CircuitHop(peer_key=target_key,
                         key=layercrypto.hop_key(priv, relay_eph))
        circuit.hops.append(hop)
        circuit._pending_eph = None
        if len(circuit.hops) < len(circuit.planned):
            self._send_extend(circuit)
            return
        self._disarm_timeout(circuit)
        circuit.state = CircuitState.READY
        circuit.ready_at = self.node.now()
        self.build_latencies.append((circuit.hop_count(),
                                     circuit.build_latency_ms()))
        for key, _ in circuit.planned:
            peer = self.node.peers.get(key)
            if peer is not None:
                peer.relay_failures = 0
        for cb in list(circuit.on_ready):
            cb(circuit)

    # -- pool ---------------------------------------------------------------

    def ready_circuits(self, hops: Optional[int] = None) -> list[Circuit]:
        out = [c for c in self.circuits.values() if c.state is CircuitState.READY]
        if hops is not None:
            out = [c for c in out if c.hop_count() == hops]
        return out

    def _pool_tick(self) -> None:
        self.maintain_pool(self.node.now())
        self._pool_timer = self.node.scheduler.call_later(
            self.node.config.maintenance_interval_ms, self._pool_tick)

    def maintain_pool(self, now: int) -> None:
        """Keep between pool_min and pool_max ready circuits."""
        cfg = self.node.config
        members = [c for c in self.circuits.values() if c.pool_member]
        ready = [c for c in members if c.state is CircuitState.READY]
        building = [c for c in members if c.state is CircuitState.EXTENDING]
        deficit = cfg.pool_min - len(ready) - len(building)
        for _ in range(max(0, deficit)):
            try:
                self.build_circuit(hops=cfg.hop_count, pool_member=True)
            except (InsufficientCandidatesError, CircuitError):
                break
        for circuit in ready[cfg.pool_max:]:
            self.close_circuit(circuit)

    def pool_size(self) -> int:
        return len([c for c in self.circuits.values()
                    if c.pool_member and c.state is CircuitState.READY])


class ExitHandle:
    """Reply anchor handed to the exit payload handler."""

    def __init__(self, service: AnonService, entry: RelayEntry):
        self._service = service
        self._entry = entry

    def reply(self, payload: bytes) -> None:
        self._service._send_backward(self._entry, CellType.DATA,
                                     bytes([EXIT_APP]) + payload)
