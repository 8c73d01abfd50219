"""Operator command line.

One command per module operation: run a node, manage pseudonyms and drive
the identity flows against a peer, verify audit logs, revoke attestations,
and launch the simulator experiments. Every command supports --json (one
JSON object per line on stdout). Exit codes: 0 success, 2 usage, 3
verification/integrity failure, 4 protocol/channel failure, 5 configuration
error, 1 anything else.

A running node exposes a line-delimited JSON control socket on localhost;
`id request`, `id allow` and `id status --connect` talk to it. The env var
IPV8_SEED forces deterministic key generation for tests.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import socket
import sys
import threading

from . import errors as err
from .config import NodeConfig
from .dpki import keys
from .node import Node
from .runtime import WallRuntime
from .ssi import chain as ssi_chain
from .ssi import frames
from .store import audit as audit_mod
from .store.revocation import RevocationEntry, RevocationMode
from .wire.endpoint import UdpEndpoint
from .wire.envelope import TransportAddress
from .zkp import ALGORITHM_RANGE, ALGORITHM_SIGMA

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VERIFY_FAILED = 3
EXIT_PROTOCOL = 4
EXIT_CONFIG = 5

# command -> module operation (1:1; checked by the coverage test)
COMMAND_TABLE = {
    "node run": "node.run",
    "id create": "ssi.create_pseudonym",
    "id add-attr": "ssi.add_attribute",
    "id attest": "ssi.attest",
    "id request": "ssi.request_verification",
    "id allow": "ssi.allow_and_prove",
    "id status": "ssi.status",
    "audit verify": "store.verify_audit",
    "revoke": "store.revoke",
    "experiment gossip": "sim.run_gossip_experiment",
    "experiment sybil": "sim.run_sybil_experiment",
    "experiment circuit": "sim.run_circuit_experiment",
    "experiment e2e": "sim.run_e2e_experiment",
}


def _emit(args, payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _home(args) -> str:
    home = args.home or os.environ.get("SOVID_HOME") or os.path.join(
        os.path.expanduser("~"), ".sovid")
    os.makedirs(home, exist_ok=True)
    return home


def _load_keypair(args) -> keys.KeyPair:
    forced = os.environ.get("IPV8_SEED")
    if forced is not None:
        seed = hashlib.sha256(forced.encode()).digest()
        return keys.generate_keypair(seed)
    path = args.key or os.path.join(_home(args), "node.key")
    return keys.load_or_create_key(path)


def _pseudonym_path(args) -> str:
    return os.path.join(_home(args), "pseudonym.jsonl")


def _load_pseudonym(args) -> ssi_chain.Pseudonym:
    keypair = _load_keypair(args)
    path = _pseudonym_path(args)
    if os.path.exists(path):
        return ssi_chain.load_pseudonym(keypair, path)
    return ssi_chain.Pseudonym(keypair)


def _parse_addr(text: str) -> TransportAddress:
    host, _, port = text.rpartition(":")
    return TransportAddress.udp(host or "127.0.0.1", int(port))


# ---------------------------------------------------------------------------
# control socket (line-delimited JSON over localhost TCP)
# ---------------------------------------------------------------------------

class ControlServer:
    def __init__(self, node: Node, runtime: WallRuntime, port: int = 0):
        self.node = node
        self.runtime = runtime
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", port))
        self._sock.listen(8)
        self.port = self._sock.getsockname()[1]
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._closed = False
        self.shutdown_requested = threading.Event()

    def start(self) -> None:
        self._thread.start()

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,),
                             daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        with conn, conn.makefile("rwb") as stream:
            for line in stream:
                try:
                    request = json.loads(line)
                except json.JSONDecodeError:
                    response = {"ok": False, "error": "bad-json"}
                else:
                    response = self._dispatch(request)
                stream.write(json.dumps(response, sort_keys=True).encode() + b"\n")
                stream.flush()
                if request.get("op") == "shutdown":
                    return

    def _on_loop(self, fn):
        """Run fn on the node's event loop and wait for its result."""
        box = {}
        done = threading.Event()

        def task():
            try:
                box["value"] = fn()
            except Exception as exc:  # surfaced to the client
                box["error"] = f"{type(exc).__name__}: {exc}"
            done.set()

        self.runtime.post(task)
        done.wait(timeout=60)
        if "error" in box:
            return {"ok": False, "error": box["error"]}
        if not done.is_set():
            return {"ok": False, "error": "timeout"}
        return {"ok": True, "result": box.get("value")}

    def _dispatch(self, request: dict) -> dict:
        op = request.get("op")
        node = self.node
        if op == "status":
            return self._on_loop(lambda: {
                "peers": len(node.peers),
                "pool": node.anon.pool_size() if node.anon else 0,
                "pseudonym": (node.ssi.active.public_key.hex()
                              if node.ssi.active else None),
                "chain_length": (len(node.ssi.active.chain)
                                 if node.ssi.active else 0),
                "outcomes": len(node.ssi.outcomes),
            })
        if op == "list-requests":
            return self._on_loop(node.ssi.list_outstanding)
        if op == "allow":
            request_id = bytes.fromhex(request["request_id"])
            return self._on_loop(
                lambda: node.ssi.allow(request_id)
                or node.ssi.allow_attest(request_id))
        if op == "deny":
            request_id = bytes.fromhex(request["request_id"])
            return self._on_loop(lambda: node.ssi.deny(request_id))
        if op == "outcomes":
            def collect():
                return [{
                    "request_id": o.request_id.hex(),
                    "ok": o.ok, "reason": o.reason,
                    "confidence": o.confidence,
                    "triple": list(o.triple),
                } for o in node.ssi.outcomes]
            return self._on_loop(collect)
        if op == "request-verification":
            service_key = bytes.fromhex(request["service_key"])
            name = request["name"]
            algorithm = request["algorithm"]
            version = request.get("version", ssi_chain.DEFAULT_VERSION)
            if algorithm == ALGORITHM_RANGE:
                lo, hi = request["range"]
                params = frames.pack_range_params(int(lo), int(hi))
            else:
                params = frames.pack_rounds_param(
                    int(request.get("rounds", node.config.sigma_rounds)))

            def start():
                return node.ssi.request_verification(
                    service_key, name, algorithm, version, params,
                    on_outcome=lambda outcome: None).hex()
            return self._on_loop(start)
        if op == "revoke":
            metadata_hash = bytes.fromhex(request["metadata_hash"])
            mode = RevocationMode(int(request.get("mode", 2)))

            def run():
                entry = node.storage.revoke(node.identity, metadata_hash, mode)
                return entry.pack().hex() if entry else None
            return self._on_loop(run)
        if op == "shutdown":
            self.shutdown_requested.set()
            return {"ok": True, "result": "stopping"}
        return {"ok": False, "error": f"unknown op {op!r}"}


def control_call(port: int, request: dict, host: str = "127.0.0.1") -> dict:
    with socket.create_connection((host, port), timeout=30) as conn:
        conn.sendall(json.dumps(request).encode() + b"\n")
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = conn.recv(65536)
            if not chunk:
                break
            buf += chunk
    return json.loads(buf)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_node_run(args) -> int:
    mapping = {}
    if args.config:
        from .sim.experiments import load_flat_config
        mapping = load_flat_config(args.config)
        if "bootstrap" in mapping:
            raw = mapping.pop("bootstrap")
            parts = raw if isinstance(raw, tuple) else (raw,)
            mapping["bootstrap"] = [_parse_addr(str(p)) for p in parts]
    try:
        config = NodeConfig.from_mapping(mapping) if mapping else NodeConfig()
    except err.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for addr in args.bootstrap or []:
        config.bootstrap.append(_parse_addr(addr))
    if args.hop_count:
        config.hop_count = args.hop_count
    config.covert_required = not args.allow_direct
    config.auto_approve = args.auto_approve
    config.validate()

    keypair = _load_keypair(args)
    runtime = WallRuntime()
    try:
        endpoint = UdpEndpoint(bind_host=args.bind_host, bind_port=args.bind_port)
    except err.BindFailure as exc:
        print(f"bind failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    node = Node(config, keypair, endpoint, runtime.clock, runtime, __import__(
        "random").Random(int.from_bytes(os.urandom(8), "big")))
    endpoint.set_receive_callback(
        lambda addr, data: runtime.post(lambda: node.on_datagram(addr, data)))
    pseudonym_path = _pseudonym_path(args)
    if os.path.exists(pseudonym_path):
        node.ssi.adopt_pseudonym(
            ssi_chain.load_pseudonym(keypair, pseudonym_path))
    node.storage.open_audit_log(os.path.join(_home(args), "audit.log"))
    control = ControlServer(node, runtime, args.control_port)
    runtime.start()
    runtime.post(node.start)
    control.start()
    _emit(args, {"node_key": keypair.public.hex(),
                 "udp": repr(endpoint.local_address()),
                 "control_port": control.port})
    try:
        while not control.shutdown_requested.wait(timeout=0.5):
            pass
    except KeyboardInterrupt:
        pass
    runtime.post(node.stop)
    control.close()
    runtime.stop()
    endpoint.close()
    return EXIT_OK


def cmd_id_create(args) -> int:
    keypair = _load_keypair(args)
    path = _pseudonym_path(args)
    if os.path.exists(path):
        print("pseudonym already exists", file=sys.stderr)
        return EXIT_CONFIG
    pseudonym = ssi_chain.Pseudonym(keypair)
    ssi_chain.save_pseudonym(pseudonym, path)
    _emit(args, {"pseudonym": keypair.public.hex(), "chain_length": 0})
    return EXIT_OK


def cmd_id_add_attr(args) -> int:
    pseudonym = _load_pseudonym(args)
    try:
        value = int(args.value)
    except ValueError:
        value = args.value
    try:
        attribute, metadata = pseudonym.add_attribute(
            args.name, args.algo, args.version, value,
            valid_until=args.valid_until)
    except err.UnknownAlgorithm as exc:
        print(f"unknown algorithm: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ssi_chain.save_pseudonym(pseudonym, _pseudonym_path(args))
    _emit(args, {
        "attribute_hash": attribute.digest().hex(),
        "metadata_hash": metadata.digest().hex(),
        "metadata_hex": metadata.pack().hex(),
        "chain_length": len(pseudonym.chain),
    })
    return EXIT_OK


def cmd_id_attest(args) -> int:
    pseudonym = _load_pseudonym(args)
    if args.import_hex:
        attestation = ssi_chain.Attestation.unpack(bytes.fromhex(args.import_hex))
        if not pseudonym.attach_attestation(attestation):
            print("attestation does not verify against this chain",
                  file=sys.stderr)
            return EXIT_VERIFY_FAILED
        ssi_chain.save_pseudonym(pseudonym, _pseudonym_path(args))
        _emit(args, {"imported": attestation.metadata_hash.hex()})
        return EXIT_OK
    if not args.metadata_hex:
        print("need --metadata-hex (to sign) or --import-hex", file=sys.stderr)
        return EXIT_USAGE
    metadata = ssi_chain.Metadata.unpack(bytes.fromhex(args.metadata_hex))
    attestation = ssi_chain.Attestation.create(metadata.digest(),
                                               pseudonym.keypair)
    _emit(args, {
        "attestation_hex": attestation.pack().hex(),
        "attester": pseudonym.public_key.hex(),
        "metadata_hash": attestation.metadata_hash.hex(),
    })
    return EXIT_OK


def cmd_id_request(args) -> int:
    request = {
        "op": "request-verification",
        "service_key": args.service_key,
        "name": args.name,
        "algorithm": args.algo,
        "version": args.version,
    }
    if args.algo == ALGORITHM_RANGE:
        if not args.range:
            print("range algorithm needs --range LO,HI", file=sys.stderr)
            return EXIT_USAGE
        lo, hi = args.range.split(",")
        request["range"] = [int(lo), int(hi)]
    else:
        request["rounds"] = args.rounds
    response = control_call(args.port, request)
    _emit(args, response)
    return EXIT_OK if response.get("ok") else EXIT_PROTOCOL


def cmd_id_allow(args) -> int:
    response = control_call(args.port, {"op": "deny" if args.deny else "allow",
                                        "request_id": args.request_id})
    _emit(args, response)
    if not response.get("ok"):
        return EXIT_PROTOCOL
    return EXIT_OK if response.get("result") else EXIT_PROTOCOL


def cmd_id_status(args) -> int:
    if args.port:
        for op in ("status", "list-requests", "outcomes"):
            response = control_call(args.port, {"op": op})
            _emit(args, {op: response.get("result")})
        return EXIT_OK
    pseudonym = _load_pseudonym(args)
    payload = {
        "pseudonym": pseudonym.public_key.hex(),
        "chain_length": len(pseudonym.chain),
        "attributes": [
            {"index": i, "name": m.name, "algorithm": m.algorithm,
             "version": m.version,
             "attesters": sorted(k.hex() for k in pseudonym.attesters_of(i))}
            for i, m in enumerate(pseudonym.metadata)
        ],
    }
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"pseudonym: {payload['pseudonym']}")
        print(f"chain length: {payload['chain_length']}")
        for attr in payload["attributes"]:
            print(f"  [{attr['index']}] {attr['name']} / {attr['algorithm']} / "
                  f"{attr['version']} attesters={len(attr['attesters'])}")
    return EXIT_OK


def cmd_audit_verify(args) -> int:
    expected = bytes.fromhex(args.expect_head) if args.expect_head else None
    ok, head, count = audit_mod.scan_log(args.file, expected_head=expected)
    payload = {"structure_ok": ok, "records": count, "head": head.hex()}
    code = EXIT_OK if ok else EXIT_VERIFY_FAILED
    if ok and args.key:
        keypair = keys.load_or_create_key(args.key)
        log = audit_mod.AuditLog(args.file, keypair.private)
        results = []
        for record in log.records():
            results.append(audit_mod.verify_audit(record))
        payload["records_verified"] = sum(results)
        payload["records_failed"] = len(results) - sum(results)
        if payload["records_failed"]:
            code = EXIT_VERIFY_FAILED
    _emit(args, payload)
    return code


def cmd_revoke(args) -> int:
    metadata_hash = bytes.fromhex(args.metadata_hash)
    mode = RevocationMode(args.mode)
    if args.port:
        response = control_call(args.port, {
            "op": "revoke", "metadata_hash": args.metadata_hash,
            "mode": args.mode})
        _emit(args, response)
        return EXIT_OK if response.get("ok") else EXIT_PROTOCOL
    keypair = _load_keypair(args)
    if mode is RevocationMode.VALIDITY_TERMS:
        _emit(args, {"mode": 3, "entry": None,
                     "note": "validity terms expire on their own; no message"})
        return EXIT_OK
    entry = RevocationEntry.create(keypair, metadata_hash, args.revoked_at)
    _emit(args, {"mode": args.mode, "entry_hex": entry.pack().hex()})
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .sim import experiments as ex
    registry = {
        "gossip": (ex.GossipExperimentConfig, ex.run_gossip_experiment),
        "sybil": (ex.SybilExperimentConfig, ex.run_sybil_experiment),
        "circuit": (ex.CircuitExperimentConfig, ex.run_circuit_experiment),
        "e2e": (ex.E2eExperimentConfig, ex.run_e2e_experiment),
    }
    config_cls, runner = registry[args.name]
    mapping = {}
    if args.config:
        mapping.update(ex.load_flat_config(args.config))
    for item in args.set or []:
        key, _, raw = item.partition("=")
        mapping[key.strip()] = ex._parse_value(raw.strip())
    if args.fractions and args.name == "sybil":
        mapping["fractions"] = tuple(
            float(f) for f in args.fractions.split(","))
    if args.seed is not None:
        if args.name in ("gossip", "sybil"):
            mapping["seeds"] = (args.seed,)
        else:
            mapping["seed"] = args.seed
    try:
        config = config_cls.from_mapping(mapping)
    except (err.ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows, summary, csv_text, json_text = runner(
        config, out_dir=args.out, processes=args.processes)
    if args.json:
        print(json_text, end="")
    else:
        print(csv_text, end="")
        print(json_text, end="", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sovid",
        description="Self-sovereign identity node, identity flows, audit "
                    "tools and simulator experiments.")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable output, one JSON object per line")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_home(p):
        p.add_argument("--home", help="state directory (default ~/.sovid)")
        p.add_argument("--key", help="32-byte key seed file")

    node_p = sub.add_parser("node", help="run a live node")
    node_sub = node_p.add_subparsers(dest="subcommand", required=True)
    run_p = node_sub.add_parser("run", help="run a UDP node with control socket")
    common_home(run_p)
    run_p.add_argument("--config", help="flat key=value node config file")
    run_p.add_argument("--bind-host", default="0.0.0.0")
    run_p.add_argument("--bind-port", type=int, default=0)
    run_p.add_argument("--control-port", type=int, default=0)
    run_p.add_argument("--bootstrap", action="append",
                       help="host:port, repeatable")
    run_p.add_argument("--hop-count", type=int, choices=(1, 2, 3))
    run_p.add_argument("--allow-direct", action="store_true",
                       help="accept identity flows over non-covert channels")
    run_p.add_argument("--auto-approve", action="store_true",
                       help="skip manual approval (tests/experiments only)")
    run_p.set_defaults(func=cmd_node_run)

    id_p = sub.add_parser("id", help="pseudonym management and flows")
    id_sub = id_p.add_subparsers(dest="subcommand", required=True)

    create_p = id_sub.add_parser("create", help="create a fresh pseudonym")
    common_home(create_p)
    create_p.set_defaults(func=cmd_id_create)

    add_p = id_sub.add_parser("add-attr", help="append an attribute (flow A.1)")
    common_home(add_p)
    add_p.add_argument("--name", required=True)
    add_p.add_argument("--value", required=True)
    add_p.add_argument("--algo", default=ALGORITHM_RANGE,
                       choices=(ALGORITHM_RANGE, ALGORITHM_SIGMA))
    add_p.add_argument("--version", default=ssi_chain.DEFAULT_VERSION)
    add_p.add_argument("--valid-until", type=int)
    add_p.set_defaults(func=cmd_id_add_attr)

    attest_p = id_sub.add_parser("attest",
                                 help="sign metadata as attester (flow A.2)")
    common_home(attest_p)
    attest_p.add_argument("--metadata-hex", help="metadata blob to sign")
    attest_p.add_argument("--import-hex",
                          help="attach a received attestation to this chain")
    attest_p.set_defaults(func=cmd_id_attest)

    req_p = id_sub.add_parser("request",
                              help="request proof from a subject (flow B.1)")
    req_p.add_argument("--port", type=int, required=True,
                       help="control port of the running node")
    req_p.add_argument("--service-key", required=True,
                       help="subject pseudonym key, hex")
    req_p.add_argument("--name", required=True)
    req_p.add_argument("--algo", default=ALGORITHM_RANGE,
                       choices=(ALGORITHM_RANGE, ALGORITHM_SIGMA))
    req_p.add_argument("--version", default=ssi_chain.DEFAULT_VERSION)
    req_p.add_argument("--range", help="LO,HI for range proofs")
    req_p.add_argument("--rounds", type=int, default=9)
    req_p.set_defaults(func=cmd_id_request)

    allow_p = id_sub.add_parser("allow",
                                help="approve a pending request (flow B.2)")
    allow_p.add_argument("--port", type=int, required=True)
    allow_p.add_argument("--request-id", required=True)
    allow_p.add_argument("--deny", action="store_true")
    allow_p.set_defaults(func=cmd_id_allow)

    status_p = id_sub.add_parser("status", help="chain and node status")
    common_home(status_p)
    status_p.add_argument("--port", type=int,
                          help="query a running node instead of local state")
    status_p.set_defaults(func=cmd_id_status)

    audit_p = sub.add_parser("audit", help="audit log tools")
    audit_sub = audit_p.add_subparsers(dest="subcommand", required=True)
    verify_p = audit_sub.add_parser("verify", help="verify an audit log file")
    verify_p.add_argument("file")
    verify_p.add_argument("--key", help="log owner key file (to replay records)")
    verify_p.add_argument("--expect-head", help="expected head hash, hex")
    verify_p.set_defaults(func=cmd_audit_verify)

    revoke_p = sub.add_parser("revoke", help="revoke an attestation")
    common_home(revoke_p)
    revoke_p.add_argument("--metadata-hash", required=True)
    revoke_p.add_argument("--mode", type=int, choices=(1, 2, 3), required=True)
    revoke_p.add_argument("--revoked-at", type=int, default=0)
    revoke_p.add_argument("--port", type=int,
                          help="submit through a running node's control socket")
    revoke_p.set_defaults(func=cmd_revoke)

    exp_p = sub.add_parser("experiment", help="run a simulator experiment")
    exp_p.add_argument("name", choices=("gossip", "sybil", "circuit", "e2e"))
    exp_p.add_argument("--config", help="flat key=value experiment config")
    exp_p.add_argument("--out", help="output directory for CSV + JSON summary")
    exp_p.add_argument("--seed", type=int)
    exp_p.add_argument("--fractions", help="comma-separated Sybil fractions")
    exp_p.add_argument("--processes", type=int)
    exp_p.add_argument("--set", action="append",
                       help="override any config key: --set n=100")
    exp_p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except err.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (err.AuditInvalid, err.BadSignatureError, err.ChainInvalid) as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    except err.SovidError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
