"""Peer discovery, hole punching, churn and RTT probing.

The walker fires every walk interval. Below the neighborhood target it
contacts a pending introduced address or a uniform-random pick from
verified ∪ bootstrap (always keeping some probability mass on the base set,
which is what makes eclipse by introduction-flooding recoverable); at or
above target it sends a keepalive request with small probability.

Churn follows a fixed per-peer timeline measured from the last inbound
message t0: pings at t0+30 s, t0+40 s and t0+50 s, drop at exactly t0+60 s.
Any inbound message resets the clock. Timers are scheduled at the absolute
deadlines, so the timeline is exact under the simulated clock.

Every ping/pong and request/response pair yields an RTT sample. Pongs carry
the responder's advertised RTT floor; a peer ever measured more than the
tolerance below its advertised floor is marked a latency-fraud suspect and
evicted (the Sybil detection rule used by relay selection).
"""

from __future__ import annotations

import struct
from typing import Optional

from ..dpki.peers import Peer
from ..errors import TruncatedError
from ..wire.envelope import TransportAddress
from .messages import (
    IntroRequest,
    IntroResponse,
    MsgType,
    Ping,
    Pong,
    Puncture,
    PunctureRequest,
)

PING_AFTER_MS = 30_000
PING_GAP_MS = 10_000
DROP_AFTER_MS = 60_000
MAX_LIVENESS_PINGS = 3

PENDING_PROBE_CAP = 512


class Discovery:
    def __init__(self, node):
        self.node = node
        self._pending_probes: dict[bytes, tuple[int, bool]] = {}
        self._pending_intros: dict[TransportAddress, Optional[bytes]] = {}
        self._liveness_timers: dict[bytes, object] = {}
        self._walk_timer = None
        self._probe_timer = None
        node.register_handler(MsgType.PING, self._on_ping)
        node.register_handler(MsgType.PONG, self._on_pong)
        node.register_handler(MsgType.INTRO_REQUEST, self._on_intro_request)
        node.register_handler(MsgType.INTRO_RESPONSE, self._on_intro_response)
        node.register_handler(MsgType.PUNCTURE_REQUEST, self._on_puncture_request)
        node.register_handler(MsgType.PUNCTURE, self._on_puncture)

    # -- lifecycle -----------------------------------------------------

    def start(self) -> None:
        cfg = self.node.config
        jitter = self.node.rng.randrange(cfg.walk_interval_ms)
        self._walk_timer = self.node.scheduler.call_later(jitter, self._walk_tick)
        if cfg.anon_enabled:
            self._probe_timer = self.node.scheduler.call_later(
                self.node.rng.randrange(cfg.rtt_probe_interval_ms), self._probe_tick)

    def stop(self) -> None:
        for timer in (self._walk_timer, self._probe_timer):
            if timer is not None:
                timer.cancel()
        for timer in self._liveness_timers.values():
            timer.cancel()
        self._liveness_timers.clear()

    # -- walking -------------------------------------------------------

    def _walk_tick(self) -> None:
        self.walk_step(self.node.now())
        self._walk_timer = self.node.scheduler.call_later(
            self.node.config.walk_interval_ms, self._walk_tick)

    def walk_step(self, now: int) -> Optional[TransportAddress]:
        """One walk step; returns the contacted address, if any."""
        table = self.node.peers
        rng = self.node.rng
        if table.earned_count() >= table.neighborhood_target:
            if rng.random() >= self.node.config.keepalive_prob:
                return None
            target = self._sample_base(rng)
        else:
            target = None
            if table.walk_candidates and rng.random() < 0.5:
                # Introductions from caught latency frauds are worthless.
                while table.walk_candidates:
                    cand = table.pop_candidate()
                    if cand is None:
                        break
                    addr, introducer = cand
                    if introducer is not None and introducer in table.suspects:
                        continue
                    self._pending_intros[addr] = introducer
                    target = addr
                    break
            if target is None:
                target = self._sample_base(rng)
        if target is None:
            return None
        self._send_intro_request(target)
        return target

    def _sample_base(self, rng) -> Optional[TransportAddress]:
        targets = self.node.peers.walk_targets()
        if not targets:
            return None
        return targets[rng.randrange(len(targets))]

    def _send_intro_request(self, addr: TransportAddress) -> None:
        nonce = self._new_probe(addr, walk=True)
        self.node.send_payload(addr, MsgType.INTRO_REQUEST, IntroRequest(nonce).pack())

    def _new_probe(self, addr: TransportAddress, walk: bool = False) -> bytes:
        nonce = struct.pack(">Q", self.node.rng.getrandbits(64))
        if len(self._pending_probes) < PENDING_PROBE_CAP:
            self._pending_probes[nonce] = (self.node.now(), walk)
        return nonce

    # -- RTT probing ---------------------------------------------------

    def _probe_tick(self) -> None:
        cfg = self.node.config
        now = self.node.now()
        needy = [p for p in self.node.peers.verified.values()
                 if len(p.rtt_samples) < 3 and p.addresses]
        needy.sort(key=lambda p: (len(p.rtt_samples), p.key))
        for peer in needy[:cfg.rtt_probe_batch]:
            self.ping(peer, now)
        self._probe_timer = self.node.scheduler.call_later(
            cfg.rtt_probe_interval_ms, self._probe_tick)

    def ping(self, peer: Peer, now: int) -> None:
        nonce = self._new_probe(peer.address())
        peer.last_ping_sent = now
        self.node.send_payload(peer.address(), MsgType.PING, Ping(nonce).pack())

    def _record_rtt(self, peer: Peer, nonce: bytes) -> None:
        entry = self._pending_probes.pop(nonce, None)
        if entry is None:
            return
        sent_at, walk = entry
        if walk:
            # Only the walker's own introduction steps earn neighborhood
            # membership; answering pings does not.
            peer.walk_earned = True
        rtt = float(self.node.now() - sent_at)
        peer.add_rtt_sample(self.node.now(), rtt)
        self._check_latency_fraud(peer, rtt)

    def _check_latency_fraud(self, peer: Peer, rtt: float) -> None:
        claim = peer.claimed_min_rtt
        if claim is None or claim <= 0:
            return
        if rtt < claim - self.node.config.rtt_tolerance_ms:
            self.node.peers.mark_suspect(peer.key)
            self._cancel_liveness(peer.key)
            self.node.counters["suspected_sybils"] += 1

    # -- churn ---------------------------------------------------------

    def on_peer_seen(self, peer: Peer) -> None:
        """Inbound message from peer: reset its liveness timeline."""
        self._schedule_liveness(peer)

    def evict_stale(self, now: int) -> list[bytes]:
        """Apply the ping/drop timeline to every verified peer."""
        dropped = []
        for peer in list(self.node.peers.verified.values()):
            if self._liveness_step(peer, now):
                dropped.append(peer.key)
        return dropped

    def _liveness_step(self, peer: Peer, now: int) -> bool:
        """Returns True when the peer was dropped."""
        silent = now - peer.last_received
        if silent >= DROP_AFTER_MS:
            self.node.peers.remove(peer.key)
            self._cancel_liveness(peer.key)
            self.node.on_peer_dropped(peer)
            return True
        if silent >= PING_AFTER_MS:
            due = min(MAX_LIVENESS_PINGS, 1 + (silent - PING_AFTER_MS) // PING_GAP_MS)
            if peer.liveness_pings < due and peer.addresses:
                peer.liveness_pings = due
                self.ping(peer, now)
        self._schedule_liveness(peer)
        return False

    def _schedule_liveness(self, peer: Peer) -> None:
        self._cancel_liveness(peer.key)
        if peer.liveness_pings >= MAX_LIVENESS_PINGS:
            deadline = peer.last_received + DROP_AFTER_MS
        else:
            deadline = peer.last_received + PING_AFTER_MS + peer.liveness_pings * PING_GAP_MS
        key = peer.key
        self._liveness_timers[key] = self.node.scheduler.call_at(
            deadline, lambda: self._on_liveness_timer(key))

    def _cancel_liveness(self, key: bytes) -> None:
        timer = self._liveness_timers.pop(key, None)
        if timer is not None:
            timer.cancel()

    def _on_liveness_timer(self, key: bytes) -> None:
        peer = self.node.peers.get(key)
        self._liveness_timers.pop(key, None)
        if peer is not None:
            self._liveness_step(peer, self.node.now())

    # -- handlers --------------------------------------------------------

    def _on_ping(self, env, src: TransportAddress) -> None:
        try:
            ping = Ping.unpack(env.payload)
        except TruncatedError:
            return
        claim = self.node.behavior.pong_claim(self.node, env.sender_key, src)
        pong = Pong(ping.nonce, claim)
        delay = self.node.behavior.pong_delay_ms(self.node)
        if delay > 0:
            self.node.scheduler.call_later(
                delay, lambda: self.node.send_payload(src, MsgType.PONG, pong.pack()))
        else:
            self.node.send_payload(src, MsgType.PONG, pong.pack())

    def honest_claim(self, sender_key: bytes) -> int:
        """Advertised RTT floor: own best measurement minus a safety margin."""
        peer = self.node.peers.get(sender_key)
        if peer is None:
            return 0
        best = peer.min_rtt()
        if best is None:
            return 0
        return max(0, int(best) - 10)

    def _on_pong(self, env, src: TransportAddress) -> None:
        try:
            pong = Pong.unpack(env.payload)
        except TruncatedError:
            return
        peer = self.node.peers.get(env.sender_key)
        if peer is None:
            return
        if pong.claimed_min_rtt_ms > 0:
            previous = peer.claimed_min_rtt or 0
            peer.claimed_min_rtt = max(previous, float(pong.claimed_min_rtt_ms))
            # "Ever measured" includes history: a fresh claim must also be
            # consistent with every sample already on record.
            past_min = peer.min_rtt()
            if past_min is not None:
                self._check_latency_fraud(peer, past_min)
                if peer.key in self.node.peers.suspects:
                    return
        self._record_rtt(peer, pong.nonce)

    def _on_intro_request(self, env, src: TransportAddress) -> None:
        try:
            req = IntroRequest.unpack(env.payload)
        except TruncatedError:
            return
        table = self.node.peers
        rng = self.node.rng
        introduced_key = introduced_addr = None
        pool = self.node.behavior.intro_pool(self.node, env.sender_key)
        pool = [k for k in pool if k != env.sender_key]
        if pool:
            introduced_key = pool[rng.randrange(len(pool))]
            peer = table.get(introduced_key)
            if peer is not None and peer.addresses:
                introduced_addr = peer.address()
            else:
                introduced_key = introduced_addr = None
        resp = IntroResponse(
            nonce=req.nonce,
            requester_addr=src,
            responder_addr=self.node.my_address(),
            introduced_key=introduced_key,
            introduced_addr=introduced_addr,
        )
        delay = self.node.behavior.intro_delay_ms(self.node)
        if delay > 0:
            self.node.scheduler.call_later(
                delay,
                lambda: self.node.send_payload(src, MsgType.INTRO_RESPONSE, resp.pack()))
        else:
            self.node.send_payload(src, MsgType.INTRO_RESPONSE, resp.pack())
        if introduced_key is not None and introduced_addr is not None:
            punct = PunctureRequest(target_key=env.sender_key, target_addr=src)
            self.node.send_payload(introduced_addr, MsgType.PUNCTURE_REQUEST,
                                   punct.pack())

    def _on_intro_response(self, env, src: TransportAddress) -> None:
        try:
            resp = IntroResponse.unpack(env.payload)
        except TruncatedError:
            return
        peer = self.node.peers.get(env.sender_key)
        if peer is not None:
            self._record_rtt(peer, resp.nonce)
        if resp.introduced_key is None or resp.introduced_addr is None:
            return
        key = resp.introduced_key
        if key == self.node.identity.public:
            return
        if self.node.blacklist.is_blacklisted(key) or key in self.node.peers.suspects:
            return
        if self.node.peers.get(key) is not None:
            return
        self.node.peers.push_candidate(resp.introduced_addr, env.sender_key)

    def _on_puncture_request(self, env, src: TransportAddress) -> None:
        try:
            req = PunctureRequest.unpack(env.payload)
        except TruncatedError:
            return
        if self.node.blacklist.is_blacklisted(req.target_key):
            return
        if req.target_key == self.node.identity.public:
            return
        nonce = struct.pack(">Q", self.node.rng.getrandbits(64))
        self.node.send_payload(req.target_addr, MsgType.PUNCTURE, Puncture(nonce).pack())

    def _on_puncture(self, env, src: TransportAddress) -> None:
        # The sender is now a verified peer (handled by generic observe);
        # record who introduced it if we were waiting on this address.
        peer = self.node.peers.get(env.sender_key)
        if peer is not None and peer.introduced_by is None:
            peer.introduced_by = self._pending_intros.pop(src, None)

    def introduced_by_hint(self, addr: TransportAddress) -> Optional[bytes]:
        return self._pending_intros.pop(addr, None)
