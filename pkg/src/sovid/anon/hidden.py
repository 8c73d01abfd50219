"""Decentralized hidden services and end-to-end encrypted channels.

A service publishes a rendezvous descriptor (service key, an encryption key
for sealed introduction payloads, a publication cookie, and the relays
serving as its introduction points) through gossip instead of any directory
server. A connecting peer builds one circuit ending at a rendezvous relay of
its own choosing and a second one ending at an introduction point, passes a
sealed payload naming the rendezvous relay, and the service answers with its
own circuit to that relay. The relay bridges the two circuits; everything
crossing the bridge is encrypted under a fresh key exchanged between the two
endpoints, so no relay — bridge included — sees plaintext, and neither
endpoint ever learns the other's transport address.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..dpki import keys
from ..errors import (
    CircuitError,
    InsufficientCandidatesError,
    NoIntroductionPoint,
    RendezvousTimeout,
    TruncatedError,
)
from ..wire.envelope import TransportAddress
from . import layercrypto
from .cells import CellType
from .circuits import (
    BACK_INTRO_DELIVER,
    BACK_RENDEZVOUS_READY,
    E2E_CHUNK,
    E2E_CHUNK_BYTES,
    AnonService,
    Circuit,
    CircuitState,
)
from .relays import eligible_relays

GOSSIP_TAG_RAW = 0x00
GOSSIP_TAG_RENDEZVOUS = 0x01
GOSSIP_TAG_REVOCATION = 0x02

COOKIE_LEN = 20
_E2E_CID = b"e2ch"  # nonce slot: channel keys are unique per channel


@dataclass(frozen=True)
class RendezvousInfo:
    service_key: bytes
    enc_key: bytes
    cookie: bytes
    introduction_points: list[tuple[bytes, TransportAddress]]

    def pack(self) -> bytes:
        out = self.service_key + self.enc_key + self.cookie
        out += bytes([len(self.introduction_points)])
        for key, addr in self.introduction_points:
            out += key + addr.pack()
        return out

    @classmethod
    def unpack(cls, b: bytes) -> "RendezvousInfo":
        if len(b) < 85:
            raise TruncatedError("rendezvous info")
        service_key, enc_key = bytes(b[:32]), bytes(b[32:64])
        cookie = bytes(b[64:84])
        count = b[84]
        off = 85
        points = []
        for _ in range(count):
            if len(b) < off + 32:
                raise TruncatedError("introduction point")
            key = bytes(b[off:off + 32])
            addr, off = TransportAddress.unpack(b, off + 32)
            points.append((key, addr))
        if off != len(b):
            raise TruncatedError("rendezvous info trailer")
        return cls(service_key, enc_key, cookie, points)


class E2eChannel:
    """Message channel between two endpoints over bridged circuits."""

    def __init__(self, anon: AnonService, circuit: Circuit, key: bytes,
                 initiated: bool, remote_service_key: Optional[bytes] = None):
        self._anon = anon
        self.circuit = circuit
        self._key = key
        self._send_dir = layercrypto.FORWARD if initiated else layercrypto.BACKWARD
        self._recv_dir = layercrypto.BACKWARD if initiated else layercrypto.FORWARD
        self._send_ctr = 0
        self._recv_ctr = 0
        self._buf = b""
        self.remote_service_key = remote_service_key
        self.on_message: Optional[Callable[[bytes], None]] = None
        self.on_closed: Optional[Callable[[], None]] = None
        self.closed = False
        circuit.on_backward_data = self._on_backward
        circuit.on_closed.append(lambda _c: self._handle_closed())

    @property
    def covert(self) -> bool:
        return True

    def send(self, message: bytes) -> None:
        if self.closed:
            raise CircuitError("channel closed")
        ct = layercrypto.seal(self._key, _E2E_CID, self._send_dir,
                              self._send_ctr, message)
        self._send_ctr += 1
        stream = struct.pack(">I", len(ct)) + ct
        for i in range(0, len(stream), E2E_CHUNK_BYTES):
            chunk = stream[i:i + E2E_CHUNK_BYTES]
            self._anon.send_raw(self.circuit, bytes([E2E_CHUNK]) + chunk)

    def close(self) -> None:
        if not self.closed:
            self._anon.close_circuit(self.circuit)

    def _handle_closed(self) -> None:
        if not self.closed:
            self.closed = True
            if self.on_closed is not None:
                self.on_closed()

    def _on_backward(self, body: bytes) -> None:
        if not body or body[0] != E2E_CHUNK:
            return
        self._buf += body[1:]
        while len(self._buf) >= 4:
            (length,) = struct.unpack(">I", self._buf[:4])
            if length > 1 << 22 or len(self._buf) < 4 + length:
                break
            ct = self._buf[4:4 + length]
            self._buf = self._buf[4 + length:]
            try:
                message = layercrypto.open_layer(self._key, _E2E_CID,
                                                 self._recv_dir, self._recv_ctr, ct)
            except layercrypto.LayerError:
                self.close()
                return
            self._recv_ctr += 1
            if self.on_message is not None:
                self.on_message(message)


@dataclass
class _ServiceState:
    keypair: keys.KeyPair
    enc_priv: object
    cookie: bytes
    info: RendezvousInfo
    intro_circuits: list[Circuit] = field(default_factory=list)


@dataclass
class _ConnectAttempt:
    service_key: bytes
    info: RendezvousInfo
    cookie: bytes
    eph_priv: object
    eph_pub: bytes
    on_ready: Callable[[E2eChannel], None]
    on_error: Callable[[Exception], None]
    rv_circuit: Optional[Circuit] = None
    intro_circuit: Optional[Circuit] = None
    timer: Optional[object] = None
    done: bool = False
    tries_left: int = 0
    tried_rv_keys: set = field(default_factory=set)


class HiddenServices:
    """Endpoint-side hidden service logic for one node."""

    def __init__(self, node, anon: AnonService):
        self.node = node
        self.anon = anon
        self.directory: dict[bytes, RendezvousInfo] = {}
        self.services: dict[bytes, _ServiceState] = {}
        self.incoming_handler: Optional[Callable[[E2eChannel], None]] = None
        node.gossip.subscribe(self._on_gossip_item)

    # -- descriptor distribution -----------------------------------------

    def _on_gossip_item(self, item) -> None:
        if not item.payload or item.payload[0] != GOSSIP_TAG_RENDEZVOUS:
            return
        try:
            info = RendezvousInfo.unpack(item.payload[1:])
        except TruncatedError:
            return
        if item.origin != info.service_key:
            return  # descriptor not signed by the service itself
        self.directory[info.service_key] = info

    # -- service side -------------------------------------------------------

    def establish_hidden_service(self, service: keys.KeyPair,
                                 n_intro: int = 2) -> RendezvousInfo:
        """Bind introduction points over ready circuits and gossip the info."""
        ready = [c for c in self.anon.ready_circuits(self.node.config.hop_count)
                 if c.on_backward_data is None]
        if not ready:
            ready = [c for c in self.anon.ready_circuits()
                     if c.on_backward_data is None]
        if not ready:
            raise NoIntroductionPoint("no ready circuit for introduction points")
        chosen: list[Circuit] = []
        seen_exits: set[bytes] = set()
        for circuit in ready:
            if circuit.exit_key in seen_exits:
                continue
            seen_exits.add(circuit.exit_key)
            chosen.append(circuit)
            if len(chosen) == n_intro:
                break
        enc_priv, enc_pub = layercrypto.ephemeral_keypair(self.node.rng)
        cookie = self.node.rng.randbytes(COOKIE_LEN)
        points = [(c.exit_key, c.planned[-1][1]) for c in chosen]
        info = RendezvousInfo(service.public, enc_pub, cookie, points)
        state = _ServiceState(keypair=service, enc_priv=enc_priv,
                              cookie=cookie, info=info, intro_circuits=chosen)
        self.services[service.public] = state
        for circuit in chosen:
            exit_key = circuit.exit_key
            transcript = b"intro-establish" + service.public + cookie + exit_key
            body = service.public + cookie + service.sign(transcript)
            self.anon.send_raw(circuit, body, CellType.INTRO_ESTABLISH)
            circuit.on_backward_data = (
                lambda data, st=state: self._on_service_backward(st, data))
        self.directory[service.public] = info
        self.node.gossip.push(bytes([GOSSIP_TAG_RENDEZVOUS]) + info.pack(),
                              origin=service)
        return info

    def _on_service_backward(self, state: _ServiceState, body: bytes) -> None:
        if not body or body[0] != BACK_INTRO_DELIVER:
            return
        try:
            blob = layercrypto.open_box(state.enc_priv, body[1:])
        except layercrypto.LayerError:
            return
        # cookie(20) rv_cookie(20) rv_key(32) rv_addr client_eph(32)
        if len(blob) < 72:
            return
        if blob[:COOKIE_LEN] != state.cookie:
            return
        rv_cookie = bytes(blob[COOKIE_LEN:2 * COOKIE_LEN])
        rv_key = bytes(blob[2 * COOKIE_LEN:2 * COOKIE_LEN + 32])
        try:
            rv_addr, off = TransportAddress.unpack(blob, 2 * COOKIE_LEN + 32)
        except TruncatedError:
            return
        if len(blob) != off + 32:
            return
        client_eph = bytes(blob[off:off + 32])
        self._join_rendezvous(state, rv_cookie, rv_key, rv_addr, client_eph)

    def _join_rendezvous(self, state: _ServiceState, rv_cookie: bytes,
                         rv_key: bytes, rv_addr: TransportAddress,
                         client_eph: bytes) -> None:
        if rv_key == self.node.identity.public:
            return  # cannot bridge through ourselves; client will retry
        try:
            path = self._path_to(rv_key, rv_addr)
        except InsufficientCandidatesError:
            return
        eph_priv, eph_pub = layercrypto.ephemeral_keypair(self.node.rng)

        def ready(circuit: Circuit) -> None:
            body = bytes([1]) + rv_cookie + eph_pub
            self.anon.send_raw(circuit, body, CellType.RENDEZVOUS)
            key = layercrypto.channel_key(eph_priv, client_eph)
            channel = E2eChannel(self.anon, circuit, key, initiated=False)
            if self.incoming_handler is not None:
                self.incoming_handler(channel)

        self.anon.build_circuit(path=path, on_ready=ready)

    # -- client side ----------------------------------------------------------

    def connect_hidden(self, service_key: bytes,
                       on_ready: Callable[[E2eChannel], None],
                       on_error: Callable[[Exception], None],
                       retries: int = 1) -> None:
        """Open an end-to-end channel to a published service."""
        info = self.directory.get(service_key)
        intro_points = [] if info is None else [
            (k, a) for k, a in info.introduction_points
            if k != self.node.identity.public]
        if info is None or not intro_points:
            on_error(NoIntroductionPoint(service_key.hex()[:16]))
            return
        eph_priv, eph_pub = layercrypto.ephemeral_keypair(self.node.rng)
        attempt = _ConnectAttempt(
            service_key=service_key,
            info=RendezvousInfo(info.service_key, info.enc_key, info.cookie,
                                intro_points),
            cookie=self.node.rng.randbytes(COOKIE_LEN),
            eph_priv=eph_priv, eph_pub=eph_pub,
            on_ready=on_ready, on_error=on_error, tries_left=retries)
        self._start_attempt(attempt)

    def _start_attempt(self, attempt: _ConnectAttempt) -> None:
        intro_keys = [k for k, _ in attempt.info.introduction_points]
        exclude = intro_keys + [attempt.service_key] + list(attempt.tried_rv_keys)
        rv_peer = self._pick_rendezvous_relay(exclude=exclude)
        if rv_peer is None:
            attempt.done = True
            attempt.on_error(InsufficientCandidatesError("no rendezvous relay"))
            return
        attempt.tried_rv_keys.add(rv_peer.key)
        attempt.timer = self.node.scheduler.call_later(
            self.node.config.rendezvous_timeout_ms,
            lambda: self._fail_attempt(attempt, RendezvousTimeout()))
        try:
            rv_path = self._path_to(rv_peer.key, rv_peer.address())
        except InsufficientCandidatesError as exc:
            self._fail_attempt(attempt, exc)
            return
        attempt.rv_circuit = self.anon.build_circuit(
            path=rv_path,
            on_ready=lambda c: self._on_rv_circuit(attempt, c),
            on_closed=lambda c: self._maybe_fail_closed(attempt, c))

    def _pick_rendezvous_relay(self, exclude):
        pool = eligible_relays(self.node.peers, self.node.blacklist, exclude)
        if not pool:
            return None
        return pool[self.node.rng.randrange(len(pool))]

    def _path_to(self, exit_key: bytes, exit_addr: TransportAddress
                 ) -> list[tuple[bytes, TransportAddress]]:
        """Path of config hop count whose exit is the given relay."""
        hops = self.node.config.hop_count
        if hops == 1:
            return [(exit_key, exit_addr)]
        peers = select_relays_prefix(self.node, hops - 1, exclude=[exit_key])
        return [(p.key, p.address()) for p in peers] + [(exit_key, exit_addr)]

    def _on_rv_circuit(self, attempt: _ConnectAttempt, circuit: Circuit) -> None:
        if attempt.done:
            return
        circuit.on_backward_data = lambda body: self._on_rv_data(attempt, body)
        self.anon.send_raw(circuit, bytes([0]) + attempt.cookie,
                           CellType.RENDEZVOUS)
        intro_key, intro_addr = attempt.info.introduction_points[
            self.node.rng.randrange(len(attempt.info.introduction_points))]
        try:
            intro_path = self._path_to(intro_key, intro_addr)
        except InsufficientCandidatesError as exc:
            self._fail_attempt(attempt, exc)
            return
        attempt.intro_circuit = self.anon.build_circuit(
            path=intro_path,
            on_ready=lambda c: self._on_intro_circuit(attempt, c))

    def _on_intro_circuit(self, attempt: _ConnectAttempt,
                          circuit: Circuit) -> None:
        if attempt.done or attempt.rv_circuit is None:
            return
        blob = (attempt.info.cookie + attempt.cookie
                + attempt.rv_circuit.exit_key
                + attempt.rv_circuit.planned[-1][1].pack()
                + attempt.eph_pub)
        sealed = layercrypto.seal_box(attempt.info.enc_key, blob, self.node.rng)
        from .circuits import EXIT_INTRO_FORWARD
        body = bytes([EXIT_INTRO_FORWARD]) + attempt.service_key + sealed
        self.anon.send_raw(circuit, body, CellType.DATA)

    def _on_rv_data(self, attempt: _ConnectAttempt, body: bytes) -> None:
        if attempt.done or not body or body[0] != BACK_RENDEZVOUS_READY:
            return
        if len(body) != 33:
            return
        service_eph = bytes(body[1:])
        attempt.done = True
        if attempt.timer is not None:
            attempt.timer.cancel()
        if attempt.intro_circuit is not None:
            self.anon.close_circuit(attempt.intro_circuit)
        key = layercrypto.channel_key(attempt.eph_priv, service_eph)
        channel = E2eChannel(self.anon, attempt.rv_circuit, key,
                             initiated=True,
                             remote_service_key=attempt.service_key)
        attempt.on_ready(channel)

    def _maybe_fail_closed(self, attempt: _ConnectAttempt,
                           circuit: Circuit) -> None:
        if not attempt.done:
            self._fail_attempt(attempt, CircuitError("rendezvous circuit closed"))

    def _fail_attempt(self, attempt: _ConnectAttempt, exc: Exception) -> None:
        if attempt.done:
            return
        attempt.done = True  # shields against on_closed re-entry while cleaning
        if attempt.timer is not None:
            attempt.timer.cancel()
        for circuit in (attempt.rv_circuit, attempt.intro_circuit):
            if circuit is not None and circuit.state is not CircuitState.CLOSED:
                self.anon.close_circuit(circuit)
        attempt.rv_circuit = attempt.intro_circuit = None
        if attempt.tries_left > 0:
            attempt.tries_left -= 1
            attempt.cookie = self.node.rng.randbytes(COOKIE_LEN)
            attempt.done = False
            self._start_attempt(attempt)
            return
        attempt.on_error(exc)


def select_relays_prefix(node, count: int, exclude):
    from .relays import select_relays
    return select_relays(count, node.peers, node.rng,
                         blacklist=node.blacklist, exclude=exclude)
