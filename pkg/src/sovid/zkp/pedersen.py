"""Pedersen commitments over the shared group.

C = v·g + r·h for value v and randomness r. Binding and hiding under the
discrete log assumption; additively homomorphic: the product (group sum) of
two commitments opens to the sum of values and randomness.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Union

from ..errors import ValueOutOfDomain
from . import group

VALUE_DOMAIN_BITS = 64
MAX_VALUE = 1 << VALUE_DOMAIN_BITS


@dataclass(frozen=True)
class Commitment:
    """Public commitment point (33 bytes compressed, 0x00 for identity)."""

    point: bytes

    def __bytes__(self) -> bytes:
        return self.point


@dataclass(frozen=True)
class Opening:
    """Private opening, held by the prover only."""

    value: int
    randomness: int


def encode_value(data: Union[int, str, bytes]) -> int:
    """Map attribute data into the commitment domain.

    Integers must already fit in 64 bits; anything else is hashed into the
    domain, after which range semantics no longer apply to it.
    """
    if isinstance(data, int):
        if not 0 <= data < MAX_VALUE:
            raise ValueOutOfDomain(f"{data} outside [0, 2^{VALUE_DOMAIN_BITS})")
        return data
    if isinstance(data, str):
        data = data.encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big")


def commit(value: int, randomness: Optional[int] = None,
           rng=None) -> tuple[Commitment, Opening]:
    """Commit to an integer; deterministic when randomness is supplied."""
    if not 0 <= value < MAX_VALUE:
        raise ValueOutOfDomain(f"{value} outside [0, 2^{VALUE_DOMAIN_BITS})")
    if randomness is None:
        if rng is None:
            import secrets
            randomness = secrets.randbelow(group.ORDER - 1) + 1
        else:
            randomness = group.rand_scalar(rng)
    randomness %= group.ORDER
    point = group.lincomb([(group.generator_g(), value),
                           (group.generator_h(), randomness)])
    return Commitment(point), Opening(value, randomness)


def combine(c1: Commitment, c2: Commitment) -> Commitment:
    """Homomorphic combination: opens to the sum of the two openings."""
    return Commitment(group.add(c1.point, c2.point))


def opens_to(c: Commitment, opening: Opening) -> bool:
    expected = group.lincomb([(group.generator_g(), opening.value),
                              (group.generator_h(), opening.randomness)])
    return expected == c.point
