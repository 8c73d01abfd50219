"""Serverless self-sovereign identity middleware.

Layers, bottom up: binary envelopes over UDP or a simulator (wire),
decentralized PKI (dpki), random-walk discovery and gossip (overlay),
onion-routed covert channels with hidden services (anon), commitments and
disclosure proofs (zkp), attribute pseudonyms and the identity flows (ssi),
audit and revocation (store), plus the deterministic simulator (sim) and a
CLI.
"""

__version__ = "0.1.0"
