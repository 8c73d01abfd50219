"""Commitments and disclosure proofs.

Two proof protocols share the Pedersen commitment layer: a non-interactive
range proof (algorithm tag "ZKRP Peng-Bao") and an interactive sigma
proof of knowledge with tunable soundness (tag "SIGMA-PoK").
"""

from . import group
from .pedersen import (
    MAX_VALUE,
    VALUE_DOMAIN_BITS,
    Commitment,
    Opening,
    combine,
    commit,
    encode_value,
    opens_to,
)
from .rangeproof import ALGORITHM_RANGE, prove_range, verify_range
from .sigma import (
    ALGORITHM_SIGMA,
    DEFAULT_ROUNDS,
    InteractiveSession,
    Prover,
    SessionState,
    Verifier,
    check_round,
    confidence_for_rounds,
    verify_transcript,
)

SUPPORTED_ALGORITHMS = (ALGORITHM_RANGE, ALGORITHM_SIGMA)

__all__ = [
    "group",
    "MAX_VALUE",
    "VALUE_DOMAIN_BITS",
    "Commitment",
    "Opening",
    "combine",
    "commit",
    "encode_value",
    "opens_to",
    "ALGORITHM_RANGE",
    "prove_range",
    "verify_range",
    "ALGORITHM_SIGMA",
    "DEFAULT_ROUNDS",
    "InteractiveSession",
    "Prover",
    "SessionState",
    "Verifier",
    "check_round",
    "confidence_for_rounds",
    "verify_transcript",
    "SUPPORTED_ALGORITHMS",
]
