"""The four identity flows as per-session state machines.

Flow A.1 (claim creation) is local to the subject. Flow A.2 (attestation)
and flows B.1/B.2 (request and proof of a claim) run between two parties
over a channel — covert by default — and always through the subject: the
attester and verifier never talk to each other.

A verification session at the verifier walks request → disclosure checks
(chain, attestations, validity terms, revocation) → ownership binding →
proof protocol, and ends with a signed audit record. Each failure mode is
reported distinctly: chain-invalid, attestation-invalid, revoked, expired,
proof-failed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional

from ..dpki import keys
from ..errors import ValueOutsideRange
from ..store import audit as audit_mod
from ..store.revocation import RevocationMode, RevocationStatus
from ..zkp import group as zkp_group
from ..zkp import rangeproof, sigma
from ..zkp.pedersen import Commitment
from . import frames
from .chain import Metadata, verify_chain

OWNERSHIP_CONTEXT = b""  # the signature covers the nonce bytes exactly


@dataclass
class VerificationOutcome:
    request_id: bytes
    subject_key: Optional[bytes]
    triple: tuple[str, str, str]
    ok: bool
    reason: str
    confidence: float
    finished_at: int


class VerifierSession:
    """Runs B.1/B.2 on the verifier side over one channel."""

    def __init__(self, ssi, channel, request_id: bytes, name: str,
                 algorithm: str, version: str, params: bytes,
                 on_outcome: Callable[[VerificationOutcome], None],
                 revocation_mode: RevocationMode = RevocationMode.SHARED_LOG,
                 trusted_attesters: Optional[set[bytes]] = None):
        self.ssi = ssi
        self.node = ssi.node
        self.channel = channel
        self.request_id = request_id
        self.triple = (name, algorithm, version)
        self.params = params
        self.on_outcome = on_outcome
        self.revocation_mode = revocation_mode
        self.trusted_attesters = trusted_attesters
        self.state = "init"
        self.disclosure: Optional[frames.Disclosure] = None
        self.nonce: Optional[bytes] = None
        self.sigma_verifier: Optional[sigma.Verifier] = None
        self.range_transcript: Optional[bytes] = None
        self.outcome: Optional[VerificationOutcome] = None
        self._timer = None

    def start(self) -> None:
        request = frames.VerifyRequest(*self.triple, self.params)
        self.channel.send_frame(frames.pack_frame(
            frames.VERIFY_REQUEST, self.request_id, request.pack()))
        self.state = "await-disclosure"
        self._timer = self.node.scheduler.call_later(
            self.node.config.verification_timeout_ms,
            lambda: self._finish(False, "timeout"))

    # -- frame handling -------------------------------------------------

    def on_frame(self, tag: int, body: bytes) -> None:
        if self.state == "done":
            return
        if tag == frames.NO_ATTRIBUTE:
            self._finish(False, "no-attribute")
        elif tag == frames.REFUSED:
            self._finish(False, "refused")
        elif tag == frames.DISCLOSURE and self.state == "await-disclosure":
            self._on_disclosure(body)
        elif tag == frames.OWNERSHIP_SIG and self.state == "await-ownership":
            self._on_ownership(body)
        elif tag == frames.RANGE_PROOF and self.state == "await-proof":
            self._on_range_proof(body)
        elif tag == frames.ROUND_COMMIT and self.state == "await-proof":
            self._on_round_commit(body)
        elif tag == frames.ROUND_RESPONSE and self.state == "await-response":
            self._on_round_response(body)

    def _on_disclosure(self, body: bytes) -> None:
        try:
            disclosure = frames.Disclosure.unpack(body)
        except Exception:
            self._finish(False, "chain-invalid")
            return
        self.disclosure = disclosure
        reason = self._structural_check(disclosure)
        if reason is not None:
            self._finish(False, reason)
            return
        self._check_revocation(disclosure)

    def _structural_check(self, d: frames.Disclosure) -> Optional[str]:
        if not d.chain or not verify_chain(d.pseudonym_key, d.chain):
            return "chain-invalid"
        matched = d.chain[-1]
        if d.metadata.attribute_hash != matched.digest():
            return "chain-invalid"
        if matched.public_data_hash != hashlib.sha256(d.commitment).digest():
            return "chain-invalid"
        if d.metadata.triple() != self.triple:
            return "chain-invalid"
        if not zkp_group.validate(d.commitment):
            return "chain-invalid"
        metadata_hash = d.metadata.digest()
        valid_atts = [a for a in d.attestations
                      if a.metadata_hash == metadata_hash and a.verify()]
        if not valid_atts or len(valid_atts) != len(d.attestations):
            return "attestation-invalid"
        if self.trusted_attesters is not None and not any(
                a.attester_key in self.trusted_attesters for a in valid_atts):
            return "attestation-invalid"
        status = self.node.storage.check_revocation(
            metadata_hash, RevocationMode.VALIDITY_TERMS, self.node.now(),
            valid_from=d.metadata.valid_from, valid_until=d.metadata.valid_until)
        if status is RevocationStatus.EXPIRED:
            return "expired"
        return None

    def _check_revocation(self, d: frames.Disclosure) -> None:
        metadata_hash = d.metadata.digest()
        if self.revocation_mode is RevocationMode.VALIDITY_TERMS:
            self._begin_ownership()
            return
        attesters = [a.attester_key for a in d.attestations]
        if self.revocation_mode is RevocationMode.SHARED_LOG:
            live = [k for k in attesters
                    if not self.node.storage.revocations.is_revoked(metadata_hash, k)]
            if not live:
                self._finish(False, "revoked")
            else:
                self._begin_ownership()
            return
        # Register mode: ask each attester's node; first definitive answer rules.
        self.state = "await-revocation"
        pending = {"count": len(attesters), "revoked": False, "unknown": False}

        def on_status(status, _entry):
            if self.state != "await-revocation":
                return
            pending["count"] -= 1
            if status is RevocationStatus.REVOKED:
                pending["revoked"] = True
            elif status is RevocationStatus.UNKNOWN:
                pending["unknown"] = True
            if pending["count"] == 0:
                if pending["revoked"]:
                    self._finish(False, "revoked")
                elif pending["unknown"]:
                    self._finish(False, "revocation-unknown")
                else:
                    self._begin_ownership()

        for attester in attesters:
            status = self.node.storage.check_revocation(
                metadata_hash, RevocationMode.REGISTER, self.node.now(),
                attester_key=attester, callback=on_status)
            if status is RevocationStatus.REVOKED:
                self._finish(False, "revoked")
                return

    def _begin_ownership(self) -> None:
        self.nonce = self.node.rng.randbytes(32)
        self.state = "await-ownership"
        self.channel.send_frame(frames.pack_frame(
            frames.OWNERSHIP_NONCE, self.request_id, self.nonce))

    def _on_ownership(self, body: bytes) -> None:
        if len(body) != keys.SIGNATURE_LEN or self.nonce is None:
            self._finish(False, "ownership-invalid")
            return
        if not keys.verify(self.disclosure.pseudonym_key, body, self.nonce):
            self._finish(False, "ownership-invalid")
            return
        self.state = "await-proof"
        if self.triple[1] == sigma.ALGORITHM_SIGMA:
            rounds = frames.unpack_rounds_param(self.params)
            self.sigma_verifier = sigma.Verifier(
                Commitment(self.disclosure.commitment), self.node.rng,
                rounds=rounds)

    def _on_range_proof(self, body: bytes) -> None:
        if self.triple[1] != rangeproof.ALGORITHM_RANGE:
            self._finish(False, "proof-failed")
            return
        try:
            transcript, _ = frames._read_lp(body, 0)
        except Exception:
            self._finish(False, "proof-failed")
            return
        a, b = frames.unpack_range_params(self.params)
        self.range_transcript = transcript
        ok = rangeproof.verify_range(self.disclosure.commitment, a, b, transcript)
        self._finish(ok, "ok" if ok else "proof-failed",
                     confidence=1.0 if ok else 0.0)

    def _on_round_commit(self, body: bytes) -> None:
        if self.sigma_verifier is None or len(body) != 33:
            self._finish(False, "proof-failed")
            return
        try:
            bit = self.sigma_verifier.challenge(body)
        except Exception:
            self._finish(False, "proof-failed")
            return
        self.state = "await-response"
        self.channel.send_frame(frames.pack_frame(
            frames.ROUND_CHALLENGE, self.request_id, bytes([bit])))

    def _on_round_response(self, body: bytes) -> None:
        verifier = self.sigma_verifier
        try:
            ok = verifier.on_response(body)
        except Exception:
            self._finish(False, "proof-failed")
            return
        if not ok:
            self._finish(False, "proof-failed")
            return
        if verifier.session.state is sigma.SessionState.ACCEPTED:
            accepted, confidence = verifier.verdict()
            self._finish(accepted, "ok" if accepted else "proof-failed",
                         confidence=confidence)
        else:
            self.state = "await-proof"

    # -- completion -------------------------------------------------------

    def _finish(self, ok: bool, reason: str, confidence: float = 0.0) -> None:
        if self.state == "done":
            return
        self.state = "done"
        if self._timer is not None:
            self._timer.cancel()
        subject_key = self.disclosure.pseudonym_key if self.disclosure else None
        self.outcome = VerificationOutcome(
            request_id=self.request_id, subject_key=subject_key,
            triple=self.triple, ok=ok, reason=reason, confidence=confidence,
            finished_at=self.node.now())
        if self.disclosure is not None:
            self._write_audit(ok, reason, confidence)
        try:
            self.channel.send_frame(frames.pack_frame(
                frames.RESULT, self.request_id,
                frames.pack_result(ok, reason, confidence)))
        except Exception:
            pass
        self.ssi.finish_session(self)
        self.on_outcome(self.outcome)

    def _write_audit(self, ok: bool, reason: str, confidence: float) -> None:
        d = self.disclosure
        if self.triple[1] == rangeproof.ALGORITHM_RANGE:
            kind = audit_mod.PROOF_RANGE
            transcript = self.range_transcript or b""
        else:
            kind = audit_mod.PROOF_SIGMA
            records = (self.sigma_verifier.session.transcript
                       if self.sigma_verifier else [])
            transcript = audit_mod.pack_sigma_transcript(records)
        bundle = audit_mod.DisclosedBundle(
            pseudonym_key=d.pseudonym_key, chain=d.chain, metadata=d.metadata,
            attestations=d.attestations, commitment=d.commitment,
            proof_kind=kind, proof_params=self.params,
            proof_transcript=transcript)
        record = audit_mod.record_audit(
            self.request_id, self.node.identity, d.pseudonym_key,
            self.node.now(), ok, reason, confidence, bundle)
        self.node.storage.record_audit(record)


class SubjectSession:
    """Answers one verification request on the subject side."""

    def __init__(self, ssi, channel, request_id: bytes,
                 request: frames.VerifyRequest):
        self.ssi = ssi
        self.node = ssi.node
        self.channel = channel
        self.request_id = request_id
        self.request = request
        self.state = "pending"
        self.ownership_used = False
        self.prover: Optional[sigma.Prover] = None
        self.rounds_left = 0
        pseudonym = ssi.active
        self.pseudonym = pseudonym
        self.index = None
        if pseudonym is not None:
            self.index = pseudonym.match_request(
                request.name, request.algorithm, request.version)
        if self.index is None:
            # Nothing matching: answer without leaking what the chain holds.
            self.channel.send_frame(frames.pack_frame(
                frames.NO_ATTRIBUTE, request_id))
            self.state = "done"
            ssi.finish_session(self)

    def allow(self) -> None:
        """Manual (or auto) approval: run flow B.2."""
        if self.state != "pending":
            return
        self.state = "disclosed"
        p = self.pseudonym
        k = self.index
        disclosure = frames.Disclosure(
            pseudonym_key=p.public_key,
            chain=p.chain[:k + 1],
            metadata=p.metadata[k],
            attestations=p.attestations_for(k),
            commitment=p.commitments[k])
        self.channel.send_frame(frames.pack_frame(
            frames.DISCLOSURE, self.request_id, disclosure.pack()))

    def deny(self) -> None:
        if self.state != "pending":
            return
        self.state = "done"
        self.channel.send_frame(frames.pack_frame(
            frames.REFUSED, self.request_id, b"denied"))
        self.ssi.finish_session(self)

    def on_frame(self, tag: int, body: bytes) -> None:
        if self.state == "done":
            return
        if tag == frames.OWNERSHIP_NONCE:
            self._on_ownership_nonce(body)
        elif tag == frames.ROUND_CHALLENGE:
            self._on_challenge(body)
        elif tag == frames.RESULT:
            self.state = "done"
            self.ssi.finish_session(self)

    def _on_ownership_nonce(self, body: bytes) -> None:
        if self.ownership_used:
            # Key usage weakens with repetition; one proof per session.
            self.channel.send_frame(frames.pack_frame(
                frames.REFUSED, self.request_id, b"ownership-once"))
            return
        self.ownership_used = True
        signature = self.pseudonym.keypair.sign(body)
        self.channel.send_frame(frames.pack_frame(
            frames.OWNERSHIP_SIG, self.request_id, signature))
        self._start_proof()

    def _start_proof(self) -> None:
        p, k = self.pseudonym, self.index
        commitment = p.commitment(k)
        opening = p.opening(k)
        if self.request.algorithm == rangeproof.ALGORITHM_RANGE:
            a, b = frames.unpack_range_params(self.request.params)
            try:
                transcript = rangeproof.prove_range(commitment, opening, a, b,
                                                    self.node.rng)
            except ValueOutsideRange:
                self.channel.send_frame(frames.pack_frame(
                    frames.REFUSED, self.request_id, b"proof-refused"))
                self.state = "done"
                self.ssi.finish_session(self)
                return
            body = frames._lp(transcript)
            self.channel.send_frame(frames.pack_frame(
                frames.RANGE_PROOF, self.request_id, body))
        else:
            rounds = frames.unpack_rounds_param(self.request.params)
            self.prover = sigma.Prover(commitment, opening, self.node.rng,
                                       rounds=rounds)
            self.rounds_left = rounds
            self._send_round_commit()

    def _send_round_commit(self) -> None:
        t = self.prover.begin_round()
        self.channel.send_frame(frames.pack_frame(
            frames.ROUND_COMMIT, self.request_id, t))

    def _on_challenge(self, body: bytes) -> None:
        if self.prover is None or len(body) != 1:
            return
        response = self.prover.respond(body[0])
        self.channel.send_frame(frames.pack_frame(
            frames.ROUND_RESPONSE, self.request_id, response))
        self.rounds_left -= 1
        if self.rounds_left > 0:
            self._send_round_commit()


class AttesterSession:
    """Answers one attestation request (flow A.2, attester side)."""

    def __init__(self, ssi, channel, request_id: bytes,
                 body: frames.AttestRequestBody):
        self.ssi = ssi
        self.channel = channel
        self.request_id = request_id
        self.body = body
        self.state = "pending"

    def allow(self) -> None:
        if self.state != "pending":
            return
        self.state = "done"
        attestation = self.ssi.attest(self.body.metadata)
        self.channel.send_frame(frames.pack_frame(
            frames.ATTEST_GRANT, self.request_id, attestation.pack()))
        self.ssi.finish_session(self)

    def deny(self) -> None:
        if self.state != "pending":
            return
        self.state = "done"
        self.channel.send_frame(frames.pack_frame(
            frames.REFUSED, self.request_id, b"denied"))
        self.ssi.finish_session(self)

    def on_frame(self, tag: int, body: bytes) -> None:
        return


class AttestRequestFlow:
    """Subject-side A.2: ask a chosen attester to sign one metadata entry."""

    def __init__(self, ssi, channel, index: int,
                 on_attestation: Callable, on_error: Callable):
        self.ssi = ssi
        self.channel = channel
        self.request_id = ssi.node.rng.randbytes(frames.REQUEST_ID_LEN)
        self.index = index
        self.on_attestation = on_attestation
        self.on_error = on_error

    def start(self) -> None:
        p = self.ssi.active
        body = frames.AttestRequestBody(
            metadata=p.metadata[self.index],
            attribute=p.chain[self.index],
            commitment=p.commitments[self.index])
        self.channel.send_frame(frames.pack_frame(
            frames.ATTEST_REQUEST, self.request_id, body.pack()))

    def on_frame(self, tag: int, body: bytes) -> None:
        from .chain import Attestation
        if tag == frames.ATTEST_GRANT:
            try:
                att = Attestation.unpack(body)
            except Exception as exc:
                self.on_error(exc)
                return
            if self.ssi.active.attach_attestation(att):
                self.ssi.finish_session(self)
                self.on_attestation(att)
            else:
                self.on_error(ValueError("attestation did not verify"))
        elif tag == frames.REFUSED:
            self.ssi.finish_session(self)
            self.on_error(ValueError("attestation refused"))
