"""Node-attached identity service.

Owns the node's pseudonyms, routes identity frames arriving over covert
channels (or, when policy allows, over direct envelopes) to per-request
sessions, and exposes the operator surface: outstanding requests that need
manual approval, verification outcomes, and the flow entry points.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Optional

from ..errors import ChannelDown, SsiError
from ..overlay.messages import MsgType
from ..store.revocation import RevocationMode
from ..wire.envelope import TransportAddress
from . import frames
from .chain import Attestation, Metadata, Pseudonym
from .flows import (
    AttesterSession,
    AttestRequestFlow,
    SubjectSession,
    VerifierSession,
    VerificationOutcome,
)


class CovertChannelAdapter:
    """Frame transport over an end-to-end hidden-service channel."""

    covert = True

    def __init__(self, channel, router):
        self.channel = channel
        self.remote_service_key = channel.remote_service_key
        channel.on_message = lambda msg: router(self, msg)

    def send_frame(self, frame: bytes) -> None:
        self.channel.send(frame)

    def close(self) -> None:
        self.channel.close()


class DirectChannelAdapter:
    """Frame transport over plain envelopes (msg_type 0x30), no anonymity."""

    covert = False

    def __init__(self, node, peer_addr: TransportAddress):
        self.node = node
        self.peer_addr = peer_addr
        self.remote_service_key = None

    def send_frame(self, frame: bytes) -> None:
        self.node.send_payload(self.peer_addr, MsgType.SSI_DIRECT, frame)

    def close(self) -> None:
        pass


class SsiService:
    def __init__(self, node):
        self.node = node
        self.pseudonyms: dict[bytes, Pseudonym] = {}
        self.active: Optional[Pseudonym] = None
        self.sessions: dict[bytes, object] = {}
        self.outstanding: "OrderedDict[bytes, SubjectSession]" = OrderedDict()
        self.outstanding_attest: "OrderedDict[bytes, AttesterSession]" = OrderedDict()
        self.outcomes: list[VerificationOutcome] = []
        self.on_outcome_listeners: list[Callable] = []
        node.register_handler(MsgType.SSI_DIRECT, self._on_direct)
        if node.hidden is not None:
            node.hidden.incoming_handler = self._on_incoming_channel

    # -- pseudonym management ------------------------------------------

    def create_pseudonym(self, seed: Optional[bytes] = None) -> Pseudonym:
        p = Pseudonym.create(seed)
        self.pseudonyms[p.public_key] = p
        if self.active is None:
            self.active = p
        return p

    def adopt_pseudonym(self, p: Pseudonym, activate: bool = True) -> None:
        self.pseudonyms[p.public_key] = p
        if activate or self.active is None:
            self.active = p

    def add_attribute(self, name: str, algorithm: str, version: str,
                      value, valid_from=None, valid_until=None):
        if self.active is None:
            raise SsiError("no active pseudonym")
        return self.active.add_attribute(
            name, algorithm, version, value, valid_from=valid_from,
            valid_until=valid_until, rng=self.node.rng)

    def attest(self, metadata: Metadata) -> Attestation:
        """Sign someone's metadata with the active pseudonym (flow A.2)."""
        if self.active is None:
            raise SsiError("no active pseudonym")
        return Attestation.create(metadata.digest(), self.active.keypair)

    # -- channel plumbing -----------------------------------------------

    def _on_incoming_channel(self, channel) -> None:
        CovertChannelAdapter(channel, self._route)

    def _on_direct(self, env, src: TransportAddress) -> None:
        adapter = DirectChannelAdapter(self.node, src)
        self._route(adapter, env.payload)

    def _route(self, adapter, data: bytes) -> None:
        try:
            tag, request_id, body = frames.parse_frame(data)
        except SsiError:
            return
        session = self.sessions.get(request_id)
        if session is not None:
            session.on_frame(tag, body)
            return
        if tag == frames.VERIFY_REQUEST:
            self._open_subject_session(adapter, request_id, body)
        elif tag == frames.ATTEST_REQUEST:
            self._open_attester_session(adapter, request_id, body)

    def _open_subject_session(self, adapter, request_id: bytes,
                              body: bytes) -> None:
        if self.node.config.covert_required and not adapter.covert:
            adapter.send_frame(frames.pack_frame(
                frames.REFUSED, request_id, b"covert-required"))
            return
        try:
            request = frames.VerifyRequest.unpack(body)
        except SsiError:
            return
        session = SubjectSession(self, adapter, request_id, request)
        if session.state == "done":
            return
        self.sessions[request_id] = session
        self.outstanding[request_id] = session
        if self.node.config.auto_approve:
            self.allow(request_id)

    def _open_attester_session(self, adapter, request_id: bytes,
                               body: bytes) -> None:
        if self.node.config.covert_required and not adapter.covert:
            adapter.send_frame(frames.pack_frame(
                frames.REFUSED, request_id, b"covert-required"))
            return
        try:
            parsed = frames.AttestRequestBody.unpack(body)
        except SsiError:
            return
        session = AttesterSession(self, adapter, request_id, parsed)
        self.sessions[request_id] = session
        self.outstanding_attest[request_id] = session
        if self.node.config.auto_approve:
            self.allow_attest(request_id)

    def finish_session(self, session) -> None:
        self.sessions.pop(getattr(session, "request_id", b""), None)
        self.outstanding.pop(getattr(session, "request_id", b""), None)
        self.outstanding_attest.pop(getattr(session, "request_id", b""), None)

    # -- operator surface ---------------------------------------------------

    def list_outstanding(self) -> list[dict]:
        out = []
        for request_id, session in self.outstanding.items():
            out.append({
                "request_id": request_id.hex(),
                "kind": "verification",
                "name": session.request.name,
                "algorithm": session.request.algorithm,
                "version": session.request.version,
            })
        for request_id, session in self.outstanding_attest.items():
            out.append({
                "request_id": request_id.hex(),
                "kind": "attestation",
                "name": session.body.metadata.name,
                "algorithm": session.body.metadata.algorithm,
                "version": session.body.metadata.version,
            })
        return out

    def allow(self, request_id: bytes) -> bool:
        """Manual approval of a pending verification (flow B.2)."""
        session = self.outstanding.pop(request_id, None)
        if session is None:
            return False
        session.allow()
        return True

    def deny(self, request_id: bytes) -> bool:
        session = self.outstanding.pop(request_id, None)
        if session is None:
            return False
        session.deny()
        return True

    def allow_attest(self, request_id: bytes) -> bool:
        session = self.outstanding_attest.pop(request_id, None)
        if session is None:
            return False
        session.allow()
        return True

    # -- verifier entry points (flow B.1) ------------------------------------

    def request_verification(self, subject_service_key: bytes, name: str,
                             algorithm: str, version: str, params: bytes,
                             on_outcome: Callable[[VerificationOutcome], None],
                             revocation_mode=RevocationMode.SHARED_LOG,
                             trusted_attesters=None) -> bytes:
        """Open a covert channel to the subject and request proof."""
        if self.node.hidden is None:
            raise ChannelDown("anonymization layer disabled")
        request_id = self.node.rng.randbytes(frames.REQUEST_ID_LEN)

        def on_channel(channel) -> None:
            adapter = CovertChannelAdapter(channel, self._route)
            session = VerifierSession(
                self, adapter, request_id, name, algorithm, version, params,
                on_outcome=self._wrap_outcome(on_outcome),
                revocation_mode=revocation_mode,
                trusted_attesters=trusted_attesters)
            self.sessions[request_id] = session
            session.start()

        def on_error(exc) -> None:
            outcome = VerificationOutcome(
                request_id=request_id, subject_key=None,
                triple=(name, algorithm, version), ok=False,
                reason=f"channel-down: {type(exc).__name__}",
                confidence=0.0, finished_at=self.node.now())
            self.outcomes.append(outcome)
            on_outcome(outcome)

        self.node.hidden.connect_hidden(subject_service_key, on_channel, on_error)
        return request_id

    def request_verification_direct(self, peer_addr: TransportAddress,
                                    name: str, algorithm: str, version: str,
                                    params: bytes, on_outcome,
                                    revocation_mode=RevocationMode.SHARED_LOG,
                                    trusted_attesters=None) -> bytes:
        """Non-covert variant; subjects refuse it unless policy allows."""
        request_id = self.node.rng.randbytes(frames.REQUEST_ID_LEN)
        adapter = DirectChannelAdapter(self.node, peer_addr)
        session = VerifierSession(
            self, adapter, request_id, name, algorithm, version, params,
            on_outcome=self._wrap_outcome(on_outcome),
            revocation_mode=revocation_mode, trusted_attesters=trusted_attesters)
        self.sessions[request_id] = session
        session.start()
        return request_id

    def _wrap_outcome(self, cb):
        def wrapped(outcome: VerificationOutcome) -> None:
            self.outcomes.append(outcome)
            for listener in self.on_outcome_listeners:
                listener(outcome)
            cb(outcome)
        return wrapped

    # -- subject-initiated attestation (flow A.2) ------------------------------

    def request_attestation(self, attester_service_key: bytes, index: int,
                            on_attestation: Callable, on_error: Callable) -> None:
        if self.node.hidden is None:
            raise ChannelDown("anonymization layer disabled")

        def on_channel(channel) -> None:
            adapter = CovertChannelAdapter(channel, self._route)
            flow = AttestRequestFlow(self, adapter, index,
                                     on_attestation, on_error)
            self.sessions[flow.request_id] = flow
            flow.start()

        self.node.hidden.connect_hidden(attester_service_key, on_channel, on_error)

    def request_attestation_direct(self, peer_addr: TransportAddress, index: int,
                                   on_attestation, on_error) -> None:
        adapter = DirectChannelAdapter(self.node, peer_addr)
        flow = AttestRequestFlow(self, adapter, index, on_attestation, on_error)
        self.sessions[flow.request_id] = flow
        flow.start()
