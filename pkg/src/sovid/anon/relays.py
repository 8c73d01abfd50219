"""Latency-diverse, Sybil-aware relay selection.

Candidates need at least three RTT samples. They are sorted by median RTT
and partitioned into one quantile band per requested hop; one relay is drawn
uniformly from each band. Identities from one physical host share a latency
profile, so without successful latency fraud they collapse into a single
band and can occupy at most one hop of any circuit. Peers already caught
advertising latencies inconsistent with their measured responses (suspects)
and peers with repeated relay failures are excluded outright.
"""

from __future__ import annotations

from typing import Iterable, Optional

from ..dpki.peers import Peer, PeerTable
from ..errors import InsufficientCandidatesError

MIN_RTT_SAMPLES = 3
MAX_RELAY_FAILURES = 3


def eligible_relays(table: PeerTable, blacklist,
                    exclude: Iterable[bytes] = ()) -> list[Peer]:
    excluded = set(exclude)
    out = []
    for peer in table.verified.values():
        if peer.key in excluded or peer.key in table.suspects:
            continue
        if blacklist is not None and peer.key in blacklist:
            continue
        if len(peer.rtt_samples) < MIN_RTT_SAMPLES or not peer.addresses:
            continue
        if peer.relay_failures >= MAX_RELAY_FAILURES:
            continue
        out.append(peer)
    return out


def select_relays(n: int, table: PeerTable, rng, blacklist=None,
                  exclude: Iterable[bytes] = (),
                  exit_key: Optional[bytes] = None) -> list[Peer]:
    """Pick n distinct relays from n latency bands; exit pinned if given.

    Returns the path in hop order (entry first). Raises
    InsufficientCandidatesError when the bands cannot all be filled.
    """
    if n < 1:
        raise ValueError("need at least one hop")
    pool = eligible_relays(table, blacklist, exclude)
    exit_peer = None
    if exit_key is not None:
        exit_peer = next((p for p in pool if p.key == exit_key), None)
        if exit_peer is None:
            raise InsufficientCandidatesError("pinned exit not eligible")
        pool = [p for p in pool if p.key != exit_key]
        n -= 1
    if len(pool) < n:
        raise InsufficientCandidatesError(f"{len(pool)} candidates for {n} hops")
    picks: list[Peer] = []
    if n > 0:
        pool.sort(key=lambda p: (p.median_rtt(), p.key))
        size = len(pool)
        for band in range(n):
            lo = band * size // n
            hi = (band + 1) * size // n
            segment = [p for p in pool[lo:hi] if p not in picks]
            if not segment:
                raise InsufficientCandidatesError("empty latency band")
            picks.append(segment[rng.randrange(len(segment))])
        rng.shuffle(picks)  # hop position must not encode latency rank
    if exit_peer is not None:
        picks.append(exit_peer)
    return picks
