"""Persistent accountability: audit transcripts and revocation."""

from .audit import (
    AuditLog,
    AuditRecord,
    DisclosedBundle,
    PROOF_RANGE,
    PROOF_SIGMA,
    pack_sigma_transcript,
    record_audit,
    replay_outcome,
    scan_log,
    unpack_sigma_transcript,
    verify_audit,
)
from .revocation import (
    RevocationEntry,
    RevocationMode,
    RevocationSet,
    RevocationStatus,
    check_validity_terms,
)
from .service import StoreService

__all__ = [
    "AuditLog",
    "AuditRecord",
    "DisclosedBundle",
    "PROOF_RANGE",
    "PROOF_SIGMA",
    "pack_sigma_transcript",
    "record_audit",
    "replay_outcome",
    "scan_log",
    "unpack_sigma_transcript",
    "verify_audit",
    "RevocationEntry",
    "RevocationMode",
    "RevocationSet",
    "RevocationStatus",
    "check_validity_terms",
    "StoreService",
]
