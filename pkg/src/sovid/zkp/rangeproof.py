"""Non-interactive range proof for Pedersen-committed values.

Proves a ≤ v ≤ b for the v inside a commitment C without revealing v. The
construction decomposes both v-a and b-v into bits, commits to every bit,
proves each bit commitment holds 0 or 1 with a Schnorr OR proof, and binds
everything under one Fiat-Shamir challenge. Revealed adjustment scalars tie
the weighted bit commitments back to C-a·g and b·g-C, so both one-sided
bounds hold exactly and together give the interval.

The transcript is a single length-delimited byte string; verification is a
pure function of (C, a, b, transcript).
"""

from __future__ import annotations

import hashlib
import struct

from ..errors import MalformedTranscript, ValueOutsideRange, ZkpError
from . import group
from .pedersen import MAX_VALUE, Commitment, Opening

ALGORITHM_RANGE = "ZKRP Peng-Bao"

_MAGIC = b"ZKRP1"
_SCALAR = 32
_POINT = group.POINT_LEN


def _bits_for(a: int, b: int) -> int:
    return max(1, (b - a).bit_length())


def _context_hash(commitment: bytes, a: int, b: int, n: int,
                  bit_commitments: list[bytes], adj_low: int, adj_high: int,
                  t_values: list[bytes]) -> int:
    h = hashlib.sha256()
    h.update(_MAGIC)
    h.update(group.generator_g())
    h.update(group.generator_h())
    h.update(commitment)
    h.update(struct.pack(">QQH", a, b, n))
    for c in bit_commitments:
        h.update(c)
    h.update(adj_low.to_bytes(_SCALAR, "big"))
    h.update(adj_high.to_bytes(_SCALAR, "big"))
    for t in t_values:
        h.update(t)
    return int.from_bytes(h.digest(), "big") % group.ORDER


def _prove_side(value: int, randomness: int, n: int, rng):
    """Bit commitments plus per-bit OR-proof precomputation for one bound."""
    g, h = group.generator_g(), group.generator_h()
    bit_comms: list[bytes] = []
    bit_rand: list[int] = []
    pre = []  # per bit: (bit, w, c_fake, z_fake, t0, t1)
    weighted = 0
    for i in range(n):
        bit = (value >> i) & 1
        r_i = group.rand_scalar(rng)
        bit_rand.append(r_i)
        weighted = (weighted + (r_i << i)) % group.ORDER
        c_i = group.lincomb([(g, bit), (h, r_i)]) if bit else group.mul(h, r_i)
        bit_comms.append(c_i)
        w = group.rand_scalar(rng)
        c_fake = group.rand_scalar(rng)
        z_fake = group.rand_scalar(rng)
        t_real = group.mul(h, w)
        if bit == 0:
            # real branch 0 (C_i = r·h); simulate branch 1 (C_i - g = r·h)
            t_fake = group.lincomb([(h, z_fake), (c_i, -c_fake), (g, c_fake)])
            t0, t1 = t_real, t_fake
        else:
            t_fake = group.lincomb([(h, z_fake), (c_i, -c_fake)])
            t0, t1 = t_fake, t_real
        pre.append((bit, w, c_fake, z_fake, t0, t1))
    adjustment = (weighted - randomness) % group.ORDER
    return bit_comms, bit_rand, pre, adjustment


def _finish_side(pre, bit_rand, challenge: int):
    """Split the global challenge per bit and close the real branches."""
    rows = []
    for (bit, w, c_fake, z_fake, _, _), r_i in zip(pre, bit_rand):
        c_real = (challenge - c_fake) % group.ORDER
        z_real = (w + c_real * r_i) % group.ORDER
        if bit == 0:
            rows.append((c_real, z_real, z_fake))   # (c0, z0, z1)
        else:
            rows.append((c_fake, z_fake, z_real))
    return rows


def prove_range(commitment: Commitment, opening: Opening,
                a: int, b: int, rng) -> bytes:
    """Build a transcript showing the committed value lies in [a, b]."""
    if not (0 <= a <= b < MAX_VALUE):
        raise ZkpError(f"invalid interval [{a}, {b}]")
    v, r = opening.value, opening.randomness
    if not a <= v <= b:
        raise ValueOutsideRange(f"value not in [{a}, {b}]")
    n = _bits_for(a, b)

    low_comms, low_rand, low_pre, adj_low = _prove_side(v - a, r, n, rng)
    high_comms, high_rand, high_pre, adj_high = _prove_side(
        b - v, (-r) % group.ORDER, n, rng)

    bit_comms = low_comms + high_comms
    t_values = [t for pre in (low_pre, high_pre) for row in pre for t in row[4:6]]
    challenge = _context_hash(commitment.point, a, b, n, bit_comms,
                              adj_low, adj_high, t_values)

    rows = _finish_side(low_pre, low_rand, challenge)
    rows += _finish_side(high_pre, high_rand, challenge)

    out = bytearray()
    out += _MAGIC
    out += struct.pack(">HQQ", n, a, b)
    out += adj_low.to_bytes(_SCALAR, "big")
    out += adj_high.to_bytes(_SCALAR, "big")
    for c_i in bit_comms:
        out += c_i
    for c0, z0, z1 in rows:
        out += c0.to_bytes(_SCALAR, "big")
        out += z0.to_bytes(_SCALAR, "big")
        out += z1.to_bytes(_SCALAR, "big")
    out += challenge.to_bytes(_SCALAR, "big")
    return bytes(out)


def _parse(transcript: bytes):
    if len(transcript) < len(_MAGIC) + 18 or transcript[:5] != _MAGIC:
        raise MalformedTranscript("header")
    n, a, b = struct.unpack_from(">HQQ", transcript, 5)
    if n == 0 or n > 80:
        raise MalformedTranscript("bit count")
    off = 5 + 18
    expected = off + 2 * _SCALAR + 2 * n * _POINT + 2 * n * 3 * _SCALAR + _SCALAR
    if len(transcript) != expected:
        raise MalformedTranscript("length")
    adj_low = int.from_bytes(transcript[off:off + _SCALAR], "big")
    off += _SCALAR
    adj_high = int.from_bytes(transcript[off:off + _SCALAR], "big")
    off += _SCALAR
    bit_comms = []
    for _ in range(2 * n):
        bit_comms.append(transcript[off:off + _POINT])
        off += _POINT
    rows = []
    for _ in range(2 * n):
        c0 = int.from_bytes(transcript[off:off + _SCALAR], "big")
        z0 = int.from_bytes(transcript[off + _SCALAR:off + 2 * _SCALAR], "big")
        z1 = int.from_bytes(transcript[off + 2 * _SCALAR:off + 3 * _SCALAR], "big")
        rows.append((c0, z0, z1))
        off += 3 * _SCALAR
    challenge = int.from_bytes(transcript[off:off + _SCALAR], "big")
    return n, a, b, adj_low, adj_high, bit_comms, rows, challenge


def verify_range(commitment_point: bytes, a: int, b: int,
                 transcript: bytes) -> bool:
    """Check a transcript against a commitment and interval. Pure."""
    try:
        n, ta, tb, adj_low, adj_high, bit_comms, rows, challenge = _parse(transcript)
    except MalformedTranscript:
        return False
    if (ta, tb) != (a, b) or not (0 <= a <= b < MAX_VALUE):
        return False
    if n != _bits_for(a, b):
        return False
    if not group.validate(commitment_point):
        return False
    if any(not group.validate(c) for c in bit_comms):
        return False
    g, h = group.generator_g(), group.generator_h()

    # Weighted bit commitments must recombine into the bound commitments.
    c_low = group.lincomb([(commitment_point, 1), (g, -a)])
    c_high = group.lincomb([(g, b), (commitment_point, -1)])
    for side, (bound, adj) in enumerate(((c_low, adj_low), (c_high, adj_high))):
        terms = [(bit_comms[side * n + i], 1 << i) for i in range(n)]
        lhs = group.lincomb(terms)
        rhs = group.lincomb([(bound, 1), (h, adj)])
        if lhs != rhs:
            return False

    t_values: list[bytes] = []
    for idx in range(2 * n):
        c_i = bit_comms[idx]
        c0, z0, z1 = rows[idx]
        c1 = (challenge - c0) % group.ORDER
        t0 = group.lincomb([(h, z0), (c_i, -c0)])
        t1 = group.lincomb([(h, z1), (c_i, -c1), (g, c1)])
        t_values.append(t0)
        t_values.append(t1)

    expected = _context_hash(commitment_point, a, b, n, bit_comms,
                             adj_low, adj_high, t_values)
    return expected == challenge


def transcript_interval(transcript: bytes) -> tuple[int, int]:
    """The interval a transcript claims, for request/disclosure matching."""
    _, a, b, *_ = _parse(transcript)
    return a, b
