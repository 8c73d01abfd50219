"""Interactive proof of knowledge of a commitment opening.

A sigma protocol with single-bit verifier challenges, repeated sequentially:
each round the prover sends t = a·g + b·h, the verifier draws one challenge
bit c, and the prover answers (z1, z2) = (a + c·v, b + c·r). The verifier
accepts the round iff z1·g + z2·h == t + c·C. A prover without the opening
survives one round with probability 1/2, so `rounds` repetitions leave a
soundness error of 2^-rounds; the reported confidence is 1 - 2^-rounds
(0.998 at the default 9 rounds).

Message shape (commitment, challenge, response over a covert channel) is
deliberately minimal so transcripts can be replayed offline by auditors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..errors import ZkpError
from . import group
from .pedersen import Commitment, Opening

DEFAULT_ROUNDS = 9

ALGORITHM_SIGMA = "SIGMA-PoK"


class SessionState(Enum):
    OPEN = "open"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


def confidence_for_rounds(rounds: int) -> float:
    """1 - 2^-rounds, rounded to the granularity used in reports."""
    return round(1.0 - 2.0 ** -rounds, 3)


@dataclass
class RoundRecord:
    commitment: bytes      # t, 33 bytes
    challenge: int         # 0 or 1
    response: Optional[tuple[int, int]] = None


@dataclass
class InteractiveSession:
    """Shared bookkeeping for one proof session."""

    rounds: int = DEFAULT_ROUNDS
    completed: int = 0
    failures: int = 0
    state: SessionState = SessionState.OPEN
    transcript: list[RoundRecord] = field(default_factory=list)

    @property
    def confidence(self) -> float:
        return confidence_for_rounds(self.rounds)


class Prover:
    """Subject side: answers challenges using the private opening."""

    def __init__(self, commitment: Commitment, opening: Opening, rng,
                 rounds: int = DEFAULT_ROUNDS):
        self.commitment = commitment
        self._opening = opening
        self._rng = rng
        self.session = InteractiveSession(rounds=rounds)
        self._pending: Optional[tuple[int, int]] = None  # (a, b) nonces

    def begin_round(self) -> bytes:
        if self.session.state is not SessionState.OPEN:
            raise ZkpError("session closed")
        if self._pending is not None:
            raise ZkpError("round already in flight")
        a = group.rand_scalar(self._rng)
        b = group.rand_scalar(self._rng)
        self._pending = (a, b)
        return group.lincomb([(group.generator_g(), a),
                              (group.generator_h(), b)])

    def respond(self, challenge: int) -> bytes:
        if self._pending is None:
            self.session.state = SessionState.REJECTED
            raise ZkpError("challenge without commitment")
        if challenge not in (0, 1):
            self.session.state = SessionState.REJECTED
            raise ZkpError("challenge must be one bit")
        a, b = self._pending
        self._pending = None
        z1 = (a + challenge * self._opening.value) % group.ORDER
        z2 = (b + challenge * self._opening.randomness) % group.ORDER
        return z1.to_bytes(32, "big") + z2.to_bytes(32, "big")


class Verifier:
    """Verifier side: draws challenge bits and checks responses."""

    def __init__(self, commitment: Commitment, rng,
                 rounds: int = DEFAULT_ROUNDS):
        self.commitment = commitment
        self._rng = rng
        self.session = InteractiveSession(rounds=rounds)
        self._current: Optional[RoundRecord] = None

    def challenge(self, t: bytes) -> int:
        if self.session.state is not SessionState.OPEN:
            raise ZkpError("session closed")
        if self._current is not None:
            self.session.state = SessionState.REJECTED
            raise ZkpError("commitment before previous response")
        if not group.validate(t):
            self.session.state = SessionState.REJECTED
            raise ZkpError("invalid round commitment")
        bit = self._rng.getrandbits(1)
        self._current = RoundRecord(commitment=t, challenge=bit)
        return bit

    def on_response(self, z_bytes: bytes) -> bool:
        if self.session.state is not SessionState.OPEN or self._current is None:
            self.session.state = SessionState.REJECTED
            raise ZkpError("response out of order")
        record = self._current
        self._current = None
        ok = False
        if len(z_bytes) == 64:
            z1 = int.from_bytes(z_bytes[:32], "big")
            z2 = int.from_bytes(z_bytes[32:], "big")
            record.response = (z1, z2)
            ok = check_round(self.commitment.point, record.commitment,
                             record.challenge, z1, z2)
        self.session.transcript.append(record)
        self.session.completed += 1
        if not ok:
            self.session.failures += 1
            self.session.state = SessionState.REJECTED
        elif self.session.completed == self.session.rounds:
            self.session.state = SessionState.ACCEPTED
        return ok

    def verdict(self) -> tuple[bool, float]:
        """(accepted, confidence); accepted only with all rounds clean."""
        accepted = (self.session.state is SessionState.ACCEPTED
                    and self.session.failures == 0
                    and self.session.completed == self.session.rounds)
        return accepted, self.session.confidence

    def abort(self) -> None:
        if self.session.state is SessionState.OPEN:
            self.session.state = SessionState.REJECTED


def check_round(commitment_point: bytes, t: bytes, challenge: int,
                z1: int, z2: int) -> bool:
    """One round's verification equation; pure, reusable for audit replay."""
    if challenge not in (0, 1):
        return False
    if not (group.validate(t) and group.validate(commitment_point)):
        return False
    lhs = group.lincomb([(group.generator_g(), z1),
                         (group.generator_h(), z2)])
    rhs = group.lincomb([(t, 1), (commitment_point, challenge)])
    return lhs == rhs


def verify_transcript(commitment_point: bytes,
                      transcript: list[RoundRecord], rounds: int) -> bool:
    """Offline replay of a finished session's transcript."""
    if len(transcript) != rounds:
        return False
    for record in transcript:
        if record.response is None:
            return False
        z1, z2 = record.response
        if not check_round(commitment_point, record.commitment,
                           record.challenge, z1, z2):
            return False
    return True
