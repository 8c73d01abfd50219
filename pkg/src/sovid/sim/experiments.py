"""Experiment runners: gossip convergence, Sybil resilience, circuit
creation latency, and end-to-end enrollment/verification cost.

Each runner expands its configuration into independent trials, executes them
(optionally across worker processes — results are ordered by parameters, not
completion, so parallelism never changes the output), and writes one CSV row
per trial plus a JSON summary of medians and quartiles. All reported times
are simulated milliseconds and all sizes are exact byte counts, so reruns
with one seed are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import multiprocessing
import os
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

from ..config import NodeConfig
from ..errors import ConfigError
from ..ssi import frames
from ..store.revocation import RevocationMode
from ..zkp import ALGORITHM_RANGE, ALGORITHM_SIGMA
from ..wire.envelope import TransportAddress
from .adversary import AdversaryModel, SybilBehavior, SybilRoster
from .core import SimNetwork
from .latency import median_link_latency, synthetic_matrix


def _sim_addr(index: int) -> TransportAddress:
    return TransportAddress.sim(index)

DEFAULT_MATRIX_SEED = 1


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------

def _quartiles(values: Sequence[float]) -> dict:
    ordered = sorted(values)
    if not ordered:
        return {"count": 0}

    def at(q: float) -> float:
        if len(ordered) == 1:
            return float(ordered[0])
        pos = q * (len(ordered) - 1)
        lo = int(pos)
        hi = min(lo + 1, len(ordered) - 1)
        frac = pos - lo
        return float(ordered[lo] * (1 - frac) + ordered[hi] * frac)

    return {"count": len(ordered), "q1": round(at(0.25), 3),
            "median": round(at(0.5), 3), "q3": round(at(0.75), 3)}


def _format_row(row: dict) -> dict:
    out = {}
    for key, value in row.items():
        if isinstance(value, float):
            out[key] = f"{value:.3f}"
        else:
            out[key] = value
    return out


def write_outputs(name: str, rows: list[dict], fieldnames: list[str],
                  summary: dict, out_dir: Optional[str]) -> tuple[str, str]:
    """Render CSV text and summary JSON; write files when out_dir given."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(_format_row(row))
    csv_text = buf.getvalue()
    json_text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{name}.csv"), "w") as fh:
            fh.write(csv_text)
        with open(os.path.join(out_dir, f"{name}_summary.json"), "w") as fh:
            fh.write(json_text)
    return csv_text, json_text


def _run_trials(worker: Callable, params: list, processes: Optional[int]) -> list:
    if processes is None:
        processes = min(os.cpu_count() or 1, len(params))
    if processes <= 1 or len(params) <= 1:
        return [worker(p) for p in params]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=processes) as pool:
        return pool.map(worker, params)


def _config_from_mapping(cls, mapping: dict):
    defaults = {f.name: f.default for f in fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in defaults:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        if isinstance(defaults[key], tuple) and not isinstance(value, tuple):
            value = (value,)
        kwargs[key] = value
    return cls(**kwargs)


def load_flat_config(path: str) -> dict:
    """Parse a flat `key = value` experiment config file."""
    out: dict = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {line!r}")
            key, _, raw = line.partition("=")
            out[key.strip()] = _parse_value(raw.strip())
    return out


def _parse_value(raw: str):
    if "," in raw:
        return tuple(_parse_value(part.strip()) for part in raw.split(","))
    for caster in (int, float):
        try:
            return caster(raw)
        except ValueError:
            continue
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


# --------------------------------------------------------------------------
# gossip convergence (information dissemination vs neighborhood size)
# --------------------------------------------------------------------------

@dataclass
class GossipExperimentConfig:
    n: int = 1000
    neighborhood_sizes: tuple = (5, 10, 20)
    seeds: tuple = tuple(range(10))
    threshold: float = 0.99
    warmup: str = "seeded"        # "seeded" | "protocol"
    warmup_ms: int = 2_000
    timeout_ms: int = 25_000
    matrix_seed: int = DEFAULT_MATRIX_SEED

    @classmethod
    def from_mapping(cls, mapping: dict) -> "GossipExperimentConfig":
        return _config_from_mapping(cls, mapping)


def _gossip_trial(params) -> dict:
    cfg: GossipExperimentConfig
    size, seed, cfg = params
    node_cfg = NodeConfig(anon_enabled=False, neighborhood_target=size,
                          gossip_fanout=size)
    matrix = synthetic_matrix(cfg.n, cfg.matrix_seed)
    net = SimNetwork(cfg.n, seed=seed, config=node_cfg, matrix=matrix)
    if cfg.warmup == "seeded":
        net.seed_neighborhoods(k=size)
        net.start()
        net.run_for(cfg.warmup_ms)
    else:
        net.start()
        net.run_for(cfg.warmup_ms)
    origin = net.rng.randrange(cfg.n)
    item = net.nodes[origin].gossip.push(b"\x00experiment-item")
    injected_at = net.clock.now_ms()
    goal = int(cfg.threshold * cfg.n)

    holders = {origin}

    def count_new() -> bool:
        # incremental check to keep the predicate cheap on large N
        for i, node in enumerate(net.nodes):
            if i not in holders and item.item_id in node.gossip.store:
                holders.add(i)
        return len(holders) >= goal

    reached = net.run_until_true(count_new, cfg.timeout_ms)
    convergence = net.clock.now_ms() - injected_at
    return {
        "n": cfg.n, "neighborhood": size, "seed": seed,
        "reached": int(reached),
        "converged_fraction": len(holders) / cfg.n,
        "convergence_ms": convergence if reached else -1,
        "ledger_balanced": int(net.capture.ledger.balanced()),
    }


def run_gossip_experiment(config: GossipExperimentConfig,
                          out_dir: Optional[str] = None,
                          processes: Optional[int] = None):
    params = [(size, seed, config)
              for size in config.neighborhood_sizes for seed in config.seeds]
    rows = _run_trials(_gossip_trial, params, processes)
    rows.sort(key=lambda r: (r["n"], r["neighborhood"], r["seed"]))
    summary = {"experiment": "gossip", "n": config.n, "per_neighborhood": {}}
    for size in config.neighborhood_sizes:
        times = [r["convergence_ms"] for r in rows
                 if r["neighborhood"] == size and r["reached"]]
        summary["per_neighborhood"][str(size)] = _quartiles(times)
    fieldnames = ["n", "neighborhood", "seed", "reached", "converged_fraction",
                  "convergence_ms", "ledger_balanced"]
    csv_text, json_text = write_outputs("gossip", rows, fieldnames, summary,
                                        out_dir)
    return rows, summary, csv_text, json_text


# --------------------------------------------------------------------------
# Sybil resilience (time to find an honest relay vs attacker fraction)
# --------------------------------------------------------------------------

@dataclass
class SybilExperimentConfig:
    total: int = 100
    fractions: tuple = (0.0, 0.25, 0.5, 0.75, 0.9, 0.99)
    seeds: tuple = tuple(range(20))
    timeout_ms: int = 600_000
    matrix_seed: int = DEFAULT_MATRIX_SEED
    introduce_only_sybils: bool = True
    falsify_latency: bool = True
    drop_relayed_cells: bool = True

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SybilExperimentConfig":
        return _config_from_mapping(cls, mapping)


def _sybil_trial(params) -> dict:
    fraction, seed, cfg = params
    total = cfg.total
    joiner = total  # the bootstrapping node under measurement
    n = total + 1
    sybil_count = round(fraction * total)
    model = AdversaryModel(sybil_fraction=fraction,
                           introduce_only_sybils=cfg.introduce_only_sybils,
                           falsify_latency=cfg.falsify_latency,
                           drop_relayed_cells=cfg.drop_relayed_cells)
    # All Sybils share one physical position; honest peers are spread out.
    import random as _random
    pick_rng = _random.Random((seed << 16) + int(fraction * 1000))
    sybil_set = set(pick_rng.sample(range(total), sybil_count))
    positions = []
    shared_pos = total + 1
    for i in range(n):
        positions.append(shared_pos if i in sybil_set else i)
    matrix = synthetic_matrix(total + 2, cfg.matrix_seed)

    roster = SybilRoster()
    behaviors = {}
    for i in sybil_set:
        rng = _random.Random((seed << 20) ^ i)
        behaviors[i] = SybilBehavior(model, roster, rng)

    # Population nodes relay and answer probes but keep no circuit pools of
    # their own; only the joining node under measurement builds circuits.
    base_cfg = NodeConfig(anon_enabled=True, hop_count=1, pool_min=0,
                          pool_max=0)
    joiner_cfg = dataclasses.replace(
        base_cfg, pool_min=2, pool_max=4, build_timeout_ms=4_000,
        maintenance_interval_ms=1_000,
        bootstrap=[])  # filled below
    bootstrap = list(range(total))
    joiner_cfg.bootstrap = [_sim_addr(i) for i in bootstrap]
    net = SimNetwork(n, seed=seed, config=base_cfg, matrix=matrix,
                     bootstrap_indices=bootstrap, behaviors=behaviors,
                     positions=positions,
                     node_configs={joiner: joiner_cfg})
    roster.keys.update(net.nodes[i].identity.public for i in sybil_set)
    honest_keys = {net.nodes[i].identity.public
                   for i in range(total) if i not in sybil_set}
    # Population converges among itself before the measured node joins.
    net.seed_neighborhoods(among=list(range(total)), with_rtt_samples=True)
    net.start(range(total))
    node = net.nodes[joiner]
    net.start([joiner])
    started_at = net.clock.now_ms()

    def honest_circuit() -> bool:
        return any(c.exit_key in honest_keys for c in node.anon.ready_circuits())

    reached = net.run_until_true(honest_circuit, cfg.timeout_ms)
    elapsed = net.clock.now_ms() - started_at
    return {
        "fraction": fraction, "seed": seed, "success": int(reached),
        "discovery_ms": elapsed if reached else -1,
        "suspected": node.counters.get("suspected_sybils", 0),
        "ledger_balanced": int(net.capture.ledger.balanced()),
    }


def run_sybil_experiment(config: SybilExperimentConfig,
                         out_dir: Optional[str] = None,
                         processes: Optional[int] = None):
    params = [(fraction, seed, config)
              for fraction in config.fractions for seed in config.seeds]
    rows = _run_trials(_sybil_trial, params, processes)
    rows.sort(key=lambda r: (r["fraction"], r["seed"]))
    summary = {"experiment": "sybil", "total": config.total, "per_fraction": {}}
    for fraction in config.fractions:
        times = [r["discovery_ms"] for r in rows
                 if r["fraction"] == fraction and r["success"]]
        successes = [r for r in rows if r["fraction"] == fraction]
        entry = _quartiles(times)
        entry["success_rate"] = round(
            sum(r["success"] for r in successes) / max(1, len(successes)), 3)
        summary["per_fraction"][f"{fraction:.2f}"] = entry
    fieldnames = ["fraction", "seed", "success", "discovery_ms", "suspected",
                  "ledger_balanced"]
    csv_text, json_text = write_outputs("sybil", rows, fieldnames, summary,
                                        out_dir)
    return rows, summary, csv_text, json_text


# --------------------------------------------------------------------------
# circuit creation latency vs hop count
# --------------------------------------------------------------------------

@dataclass
class CircuitExperimentConfig:
    n: int = 40
    hop_counts: tuple = (1, 2, 3)
    trials: int = 60
    seed: int = 0
    matrix_seed: int = DEFAULT_MATRIX_SEED
    build_spacing_ms: int = 250

    @classmethod
    def from_mapping(cls, mapping: dict) -> "CircuitExperimentConfig":
        return _config_from_mapping(cls, mapping)


def _circuit_trial(params) -> list[dict]:
    hops, cfg = params
    node_cfg = NodeConfig(anon_enabled=True, hop_count=hops, pool_min=1,
                          pool_max=2)
    matrix = synthetic_matrix(cfg.n, cfg.matrix_seed)
    net = SimNetwork(cfg.n, seed=cfg.seed * 1000 + hops, config=node_cfg,
                     matrix=matrix)
    net.seed_neighborhoods(with_rtt_samples=True)
    net.start()
    builder = net.nodes[0]
    rows = []
    for trial in range(cfg.trials):
        results: list[int] = []
        circuit = builder.anon.build_circuit(
            hops=hops, on_ready=lambda c: results.append(c.build_latency_ms()))
        net.run_until_true(lambda: bool(results),
                           builder.config.build_timeout_ms + 1000)
        if results:
            rows.append({"hops": hops, "trial": trial, "seed": cfg.seed,
                         "build_ms": results[0]})
            builder.anon.close_circuit(circuit)
        else:
            rows.append({"hops": hops, "trial": trial, "seed": cfg.seed,
                         "build_ms": -1})
        net.run_for(cfg.build_spacing_ms)
    return rows


def _measure_direct_verification(cfg: CircuitExperimentConfig) -> int:
    """Baseline: B.1+B.2 latency without the anonymization layer."""
    node_cfg = NodeConfig(anon_enabled=False, covert_required=False,
                          auto_approve=True)
    matrix = synthetic_matrix(cfg.n, cfg.matrix_seed)
    net = SimNetwork(cfg.n, seed=cfg.seed, config=node_cfg, matrix=matrix)
    net.seed_neighborhoods()
    net.start()
    subject, verifier = net.nodes[1], net.nodes[2]
    pseudo = subject.ssi.create_pseudonym()
    _, meta = subject.ssi.add_attribute("age", ALGORITHM_RANGE,
                                        "version 3", 25)
    attestation = verifier.ssi.create_pseudonym()  # self-attested baseline
    att = verifier.ssi.attest(meta)
    pseudo.attach_attestation(att)
    outcomes = []
    start = net.clock.now_ms()
    verifier.ssi.request_verification_direct(
        net.endpoints[1].local_address(), "age", ALGORITHM_RANGE, "version 3",
        frames.pack_range_params(21, 120), on_outcome=outcomes.append,
        revocation_mode=RevocationMode.VALIDITY_TERMS)
    net.run_until_true(lambda: bool(outcomes), 60_000)
    return net.clock.now_ms() - start


def run_circuit_experiment(config: CircuitExperimentConfig,
                           out_dir: Optional[str] = None,
                           processes: Optional[int] = None):
    params = [(hops, config) for hops in config.hop_counts]
    nested = _run_trials(_circuit_trial, params, processes)
    rows = [row for batch in nested for row in batch]
    rows.sort(key=lambda r: (r["hops"], r["trial"]))
    baseline_ms = _measure_direct_verification(config)
    matrix = synthetic_matrix(config.n, config.matrix_seed)
    link_median = median_link_latency(matrix)
    summary = {"experiment": "circuit", "per_hops": {},
               "median_link_latency_ms": round(link_median, 3),
               "verification_baseline_ms": baseline_ms}
    for hops in config.hop_counts:
        times = [r["build_ms"] for r in rows
                 if r["hops"] == hops and r["build_ms"] >= 0]
        entry = _quartiles(times)
        if entry.get("median") is not None and baseline_ms > 0:
            entry["ratio_to_verification"] = round(
                entry["median"] / baseline_ms, 3)
        summary["per_hops"][str(hops)] = entry
    fieldnames = ["hops", "trial", "seed", "build_ms"]
    csv_text, json_text = write_outputs("circuit", rows, fieldnames, summary,
                                        out_dir)
    return rows, summary, csv_text, json_text


# --------------------------------------------------------------------------
# end-to-end enrollment / verification latency and traffic
# --------------------------------------------------------------------------

@dataclass
class E2eExperimentConfig:
    n: int = 50
    algorithms: tuple = ("ZKRP Peng-Bao", "SIGMA-PoK:1", "SIGMA-PoK:9",
                         "SIGMA-PoK:18")
    trials: int = 3
    seed: int = 0
    matrix_seed: int = DEFAULT_MATRIX_SEED
    with_anon: tuple = (0, 1)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "E2eExperimentConfig":
        return _config_from_mapping(cls, mapping)


def _parse_algorithm(tag: str) -> tuple[str, int]:
    if tag.startswith(ALGORITHM_SIGMA):
        rounds = int(tag.split(":")[1]) if ":" in tag else 9
        return ALGORITHM_SIGMA, rounds
    return ALGORITHM_RANGE, 0


_SSI_TYPES = frozenset([0x30])
_CELL_TYPES = frozenset(range(0x10, 0x18))


def _session_bytes(net: SimNetwork, endpoints: set[int], t0: int, t1: int,
                   anon: bool) -> int:
    wanted = _CELL_TYPES if anon else _SSI_TYPES
    total = 0
    for rec in net.capture.records:
        if rec.time_ms < t0 or rec.time_ms > t1:
            continue
        if rec.msg_type not in wanted:
            continue
        if rec.src in endpoints or rec.dst in endpoints:
            total += rec.size
    return total


def _e2e_trial(params) -> list[dict]:
    algorithm_tag, anon, cfg = params
    algorithm, rounds = _parse_algorithm(algorithm_tag)
    node_cfg = NodeConfig(anon_enabled=bool(anon), hop_count=2,
                          covert_required=bool(anon), auto_approve=True)
    matrix = synthetic_matrix(cfg.n, cfg.matrix_seed)
    net = SimNetwork(cfg.n, seed=cfg.seed * 7919 + (31 if anon else 0),
                     config=node_cfg, matrix=matrix, keep_records=True)
    net.seed_neighborhoods(with_rtt_samples=True)
    net.start()
    net.run_for(6_000 if anon else 1_000)

    attester, subject, verifier = net.nodes[1], net.nodes[2], net.nodes[3]
    att_pseudo = attester.ssi.create_pseudonym()
    subj_pseudo = subject.ssi.create_pseudonym()
    if anon:
        attester.hidden.establish_hidden_service(att_pseudo.keypair)
        subject.hidden.establish_hidden_service(subj_pseudo.keypair)
        net.run_for(4_000)
    endpoints = {1, 2, 3}
    rows = []
    for trial in range(cfg.trials):
        # enrollment: A.1 (local) + A.2 over the channel
        t0 = net.clock.now_ms()
        attr, meta = subject.ssi.add_attribute(
            f"age{trial}", algorithm, "version 3", 25)
        index = len(subj_pseudo.chain) - 1
        got: list = []
        if anon:
            subject.ssi.request_attestation(att_pseudo.public_key, index,
                                            got.append, got.append)
        else:
            subject.ssi.request_attestation_direct(
                net.endpoints[1].local_address(), index, got.append, got.append)
        net.run_until_true(lambda: bool(got), 120_000)
        t1 = net.clock.now_ms()
        enroll_bytes = _session_bytes(net, endpoints, t0, t1, bool(anon))
        rows.append({"algorithm": algorithm_tag, "rounds": rounds,
                     "anon": anon, "phase": "enrollment", "trial": trial,
                     "latency_ms": t1 - t0, "bytes": enroll_bytes})

        # verification: B.1 + B.2
        params_blob = (frames.pack_rounds_param(rounds)
                       if algorithm == ALGORITHM_SIGMA
                       else frames.pack_range_params(21, 120))
        outcomes: list = []
        t2 = net.clock.now_ms()
        if anon:
            verifier.ssi.request_verification(
                subj_pseudo.public_key, f"age{trial}", algorithm, "version 3",
                params_blob, on_outcome=outcomes.append,
                revocation_mode=RevocationMode.VALIDITY_TERMS)
        else:
            verifier.ssi.request_verification_direct(
                net.endpoints[2].local_address(), f"age{trial}", algorithm,
                "version 3", params_blob, on_outcome=outcomes.append,
                revocation_mode=RevocationMode.VALIDITY_TERMS)
        net.run_until_true(lambda: bool(outcomes), 120_000)
        t3 = net.clock.now_ms()
        verify_bytes = _session_bytes(net, endpoints, t2, t3, bool(anon))
        ok = outcomes and outcomes[0].ok
        rows.append({"algorithm": algorithm_tag, "rounds": rounds,
                     "anon": anon, "phase": "verification", "trial": trial,
                     "latency_ms": t3 - t2 if ok else -1,
                     "bytes": verify_bytes})
        net.run_for(500)
    return rows


def run_e2e_experiment(config: E2eExperimentConfig,
                       out_dir: Optional[str] = None,
                       processes: Optional[int] = None):
    params = [(alg, anon, config)
              for alg in config.algorithms for anon in config.with_anon]
    nested = _run_trials(_e2e_trial, params, processes)
    rows = [row for batch in nested for row in batch]
    rows.sort(key=lambda r: (r["algorithm"], r["anon"], r["phase"], r["trial"]))
    summary = {"experiment": "e2e", "per_algorithm": {}}
    for alg in config.algorithms:
        entry = {}
        for anon in config.with_anon:
            for phase in ("enrollment", "verification"):
                sel = [r for r in rows if r["algorithm"] == alg
                       and r["anon"] == anon and r["phase"] == phase
                       and r["latency_ms"] >= 0]
                entry[f"{phase}_anon{anon}"] = {
                    "latency": _quartiles([r["latency_ms"] for r in sel]),
                    "bytes": _quartiles([r["bytes"] for r in sel]),
                }
        summary["per_algorithm"][alg] = entry
    fieldnames = ["algorithm", "rounds", "anon", "phase", "trial",
                  "latency_ms", "bytes"]
    csv_text, json_text = write_outputs("e2e", rows, fieldnames, summary,
                                        out_dir)
    return rows, summary, csv_text, json_text
