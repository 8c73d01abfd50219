"""Node configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .wire.envelope import TransportAddress


@dataclass
class NodeConfig:
    overlay_name: str = "sovid"
    walk_interval_ms: int = 500
    neighborhood_target: int = 20
    connection_cap: int = 30
    keepalive_prob: float = 0.05
    gossip_fanout: int = 20
    gossip_interval_ms: int = 500
    bootstrap: list[TransportAddress] = field(default_factory=list)
    anon_enabled: bool = True
    hop_count: int = 2
    pool_min: int = 4
    pool_max: int = 8
    build_timeout_ms: int = 10_000
    rendezvous_timeout_ms: int = 30_000
    rtt_tolerance_ms: float = 5.0
    rtt_probe_interval_ms: int = 500
    rtt_probe_batch: int = 4
    maintenance_interval_ms: int = 2_000
    covert_required: bool = True
    auto_approve: bool = False
    register_timeout_ms: int = 2_000
    verification_timeout_ms: int = 30_000
    sigma_rounds: int = 9

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.hop_count <= 3:
            raise ConfigError("hop_count must be between 1 and 3")
        if not 0 <= self.pool_min <= self.pool_max:
            raise ConfigError("need 0 <= pool_min <= pool_max")
        if self.neighborhood_target > self.connection_cap:
            raise ConfigError("neighborhood_target exceeds connection_cap")
        if not 0.0 <= self.keepalive_prob <= 1.0:
            raise ConfigError("keepalive_prob must be a probability")
        if self.walk_interval_ms <= 0 or self.gossip_interval_ms <= 0:
            raise ConfigError("intervals must be positive")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "NodeConfig":
        """Build from a flat key-value mapping, rejecting unknown keys."""
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = value
        return cls(**kwargs)
