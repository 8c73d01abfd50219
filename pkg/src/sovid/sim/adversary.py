"""Adversary models for simulations.

Sybil identities follow the protocol except that, per the attack model:
they only ever introduce other Sybils, they artificially modify their
latency (delayed pongs advertising an inflated RTT floor, while answering
introduction requests at line speed — the inconsistency that latency-fraud
detection catches over time), and they silently drop any circuit cell they
are asked to relay. All Sybils share one physical position in the latency
matrix, so without successful latency fraud they collapse into one latency
band.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..node import Node, NodeBehavior


@dataclass
class AdversaryModel:
    sybil_fraction: float
    introduce_only_sybils: bool = True
    falsify_latency: bool = True
    drop_relayed_cells: bool = True

    def __post_init__(self):
        if not 0.0 <= self.sybil_fraction < 1.0:
            raise ValueError("sybil_fraction must be in [0, 1)")


@dataclass
class SybilRoster:
    """Shared view of which public keys are Sybil identities."""

    keys: set[bytes] = field(default_factory=set)


class SybilBehavior(NodeBehavior):
    def __init__(self, model: AdversaryModel, roster: SybilRoster,
                 rng: random.Random):
        self.model = model
        self.roster = roster
        self.claimed_floor_ms = rng.randrange(100, 400)
        self.pong_extra_delay_ms = self.claimed_floor_ms

    def intro_pool(self, node: Node, requester_key: bytes) -> list[bytes]:
        pool = list(node.peers.verified.keys())
        if self.model.introduce_only_sybils:
            pool = [k for k in pool if k in self.roster.keys]
        return pool

    def pong_claim(self, node: Node, sender_key, src) -> int:
        if self.model.falsify_latency:
            return self.claimed_floor_ms
        return super().pong_claim(node, sender_key, src)

    def pong_delay_ms(self, node: Node) -> int:
        if self.model.falsify_latency:
            return self.pong_extra_delay_ms
        return 0

    def relay_cells(self, node: Node) -> bool:
        return not self.model.drop_relayed_cells
