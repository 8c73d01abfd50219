"""Prime-order group for commitments and proofs.

The group is the NIST P-256 curve: prime order (cofactor 1), 128-bit
security. Elements travel as SEC1 compressed points (33 bytes; the identity
is the single byte 0x00). Scalars are Python ints reduced mod the order.

Two interchangeable backends implement the arithmetic: a ctypes binding to
the system libcrypto (fast path) and a pure-Python Jacobian implementation
(fallback, and cross-check in tests). Set SOVID_PURE_GROUP=1 to force the
pure backend.

The two commitment generators are derived by hash-to-group of fixed ASCII
labels, so no party knows their relative discrete log and neither equals the
curve's standard base point.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import hashlib
import os
import threading
from typing import Optional, Sequence

# NIST P-256 domain parameters.
P = 0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF
A = P - 3
B = 0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B
ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5

IDENTITY = b"\x00"
POINT_LEN = 33

_NID_P256 = 415  # X9.62 prime256v1
_FORM_COMPRESSED = 2


class GroupError(Exception):
    """Invalid point encoding or backend failure."""


def _sqrt_mod_p(value: int) -> Optional[int]:
    # p ≡ 3 (mod 4), so a square root, if any, is value^((p+1)/4).
    root = pow(value, (P + 1) // 4, P)
    if root * root % P != value % P:
        return None
    return root


class _PureBackend:
    """Jacobian-coordinate P-256 arithmetic in plain Python."""

    name = "pure"

    # Internal representation: (X, Y, Z) Jacobian, Z=0 for the identity.

    def _decompress(self, data: bytes) -> tuple[int, int, int]:
        if data == IDENTITY:
            return (1, 1, 0)
        if len(data) != POINT_LEN or data[0] not in (2, 3):
            raise GroupError("bad point encoding")
        x = int.from_bytes(data[1:], "big")
        if x >= P:
            raise GroupError("x out of field")
        y_sq = (pow(x, 3, P) + A * x + B) % P
        y = _sqrt_mod_p(y_sq)
        if y is None:
            raise GroupError("not on curve")
        if y & 1 != data[0] & 1:
            y = P - y
        return (x, y, 1)

    def _compress(self, pt: tuple[int, int, int]) -> bytes:
        x, y, z = pt
        if z == 0:
            return IDENTITY
        zinv = pow(z, P - 2, P)
        zinv2 = zinv * zinv % P
        ax = x * zinv2 % P
        ay = y * zinv2 * zinv % P
        return bytes([2 | (ay & 1)]) + ax.to_bytes(32, "big")

    def _double(self, pt):
        x1, y1, z1 = pt
        if z1 == 0 or y1 == 0:
            return (1, 1, 0)
        delta = z1 * z1 % P
        gamma = y1 * y1 % P
        beta = x1 * gamma % P
        alpha = 3 * (x1 - delta) * (x1 + delta) % P
        x3 = (alpha * alpha - 8 * beta) % P
        z3 = ((y1 + z1) ** 2 - gamma - delta) % P
        y3 = (alpha * (4 * beta - x3) - 8 * gamma * gamma) % P
        return (x3, y3, z3)

    def _add(self, p1, p2):
        x1, y1, z1 = p1
        x2, y2, z2 = p2
        if z1 == 0:
            return p2
        if z2 == 0:
            return p1
        z1z1 = z1 * z1 % P
        z2z2 = z2 * z2 % P
        u1 = x1 * z2z2 % P
        u2 = x2 * z1z1 % P
        s1 = y1 * z2 * z2z2 % P
        s2 = y2 * z1 * z1z1 % P
        if u1 == u2:
            if s1 != s2:
                return (1, 1, 0)
            return self._double(p1)
        h = (u2 - u1) % P
        i = (2 * h) ** 2 % P
        j = h * i % P
        r = 2 * (s2 - s1) % P
        v = u1 * i % P
        x3 = (r * r - j - 2 * v) % P
        y3 = (r * (v - x3) - 2 * s1 * j) % P
        z3 = ((z1 + z2) ** 2 - z1z1 - z2z2) % P * h % P
        return (x3, y3, z3)

    def _mul(self, pt, scalar: int):
        scalar %= ORDER
        result = (1, 1, 0)
        addend = pt
        while scalar:
            if scalar & 1:
                result = self._add(result, addend)
            addend = self._double(addend)
            scalar >>= 1
        return result

    def lincomb(self, pairs: Sequence[tuple[bytes, int]]) -> bytes:
        acc = (1, 1, 0)
        for data, scalar in pairs:
            acc = self._add(acc, self._mul(self._decompress(data), scalar))
        return self._compress(acc)

    def validate(self, data: bytes) -> bool:
        try:
            self._decompress(data)
            return True
        except GroupError:
            return False


class _OpenSslBackend:
    """EC arithmetic through libcrypto's EC_POINT API."""

    name = "openssl"

    def __init__(self) -> None:
        path = ctypes.util.find_library("crypto")
        if path is None:
            raise GroupError("libcrypto not found")
        lib = ctypes.CDLL(path)
        self._lib = lib
        vp, i, sz, cp = ctypes.c_void_p, ctypes.c_int, ctypes.c_size_t, ctypes.c_char_p
        proto = {
            "EC_GROUP_new_by_curve_name": (vp, [i]),
            "EC_POINT_new": (vp, [vp]),
            "EC_POINT_free": (None, [vp]),
            "EC_POINT_mul": (i, [vp, vp, vp, vp, vp, vp]),
            "EC_POINTs_mul": (i, [vp, vp, vp, sz, ctypes.POINTER(vp), ctypes.POINTER(vp), vp]),
            "EC_POINT_point2oct": (sz, [vp, vp, i, cp, sz, vp]),
            "EC_POINT_oct2point": (i, [vp, vp, cp, sz, vp]),
            "EC_POINT_set_to_infinity": (i, [vp, vp]),
            "EC_POINT_is_at_infinity": (i, [vp, vp]),
            "BN_bin2bn": (vp, [cp, i, vp]),
            "BN_free": (None, [vp]),
            "BN_CTX_new": (vp, []),
            "BN_CTX_free": (None, [vp]),
        }
        for fname, (restype, argtypes) in proto.items():
            fn = getattr(lib, fname)
            fn.restype = restype
            fn.argtypes = argtypes
        self._group = lib.EC_GROUP_new_by_curve_name(_NID_P256)
        if not self._group:
            raise GroupError("EC_GROUP_new_by_curve_name failed")
        self._local = threading.local()

    def _ctx(self):
        ctx = getattr(self._local, "ctx", None)
        if ctx is None:
            ctx = self._lib.BN_CTX_new()
            self._local.ctx = ctx
        return ctx

    def _point_in(self, data: bytes):
        pt = self._lib.EC_POINT_new(self._group)
        if not pt:
            raise GroupError("EC_POINT_new failed")
        if data == IDENTITY:
            self._lib.EC_POINT_set_to_infinity(self._group, pt)
            return pt
        if len(data) != POINT_LEN or data[0] not in (2, 3):
            self._lib.EC_POINT_free(pt)
            raise GroupError("bad point encoding")
        ok = self._lib.EC_POINT_oct2point(self._group, pt, data, len(data), self._ctx())
        if not ok:
            self._lib.EC_POINT_free(pt)
            raise GroupError("not on curve")
        return pt

    def _point_out(self, pt) -> bytes:
        if self._lib.EC_POINT_is_at_infinity(self._group, pt):
            return IDENTITY
        buf = ctypes.create_string_buffer(POINT_LEN)
        n = self._lib.EC_POINT_point2oct(
            self._group, pt, _FORM_COMPRESSED, buf, POINT_LEN, self._ctx())
        if n != POINT_LEN:
            raise GroupError("point2oct failed")
        return bytes(buf.raw[:POINT_LEN])

    def lincomb(self, pairs: Sequence[tuple[bytes, int]]) -> bytes:
        ctx = self._ctx()
        points, bns = [], []
        result = None
        try:
            for data, scalar in pairs:
                points.append(self._point_in(data))
                raw = (scalar % ORDER).to_bytes(32, "big")
                bn = self._lib.BN_bin2bn(raw, 32, None)
                if not bn:
                    raise GroupError("BN_bin2bn failed")
                bns.append(bn)
            result = self._lib.EC_POINT_new(self._group)
            if not result:
                raise GroupError("EC_POINT_new failed")
            arr_p = (ctypes.c_void_p * len(points))(*points)
            arr_b = (ctypes.c_void_p * len(bns))(*bns)
            ok = self._lib.EC_POINTs_mul(
                self._group, result, None, len(points), arr_p, arr_b, ctx)
            if not ok:
                raise GroupError("EC_POINTs_mul failed")
            return self._point_out(result)
        finally:
            for pt in points:
                self._lib.EC_POINT_free(pt)
            for bn in bns:
                self._lib.BN_free(bn)
            if result is not None:
                self._lib.EC_POINT_free(result)

    def validate(self, data: bytes) -> bool:
        try:
            pt = self._point_in(data)
        except GroupError:
            return False
        self._lib.EC_POINT_free(pt)
        return True


def _select_backend():
    if os.environ.get("SOVID_PURE_GROUP") == "1":
        return _PureBackend()
    try:
        return _OpenSslBackend()
    except Exception:
        return _PureBackend()


_backend = _select_backend()


def backend_name() -> str:
    return _backend.name


def lincomb(pairs: Sequence[tuple[bytes, int]]) -> bytes:
    """Sum of scalar·point terms; the workhorse for all formulas."""
    pairs = [(d, s) for d, s in pairs if s % ORDER != 0 and d != IDENTITY]
    if not pairs:
        return IDENTITY
    return _backend.lincomb(pairs)


def mul(point: bytes, scalar: int) -> bytes:
    return lincomb([(point, scalar)])


def add(p: bytes, q: bytes) -> bytes:
    return lincomb([(p, 1), (q, 1)])


def sub(p: bytes, q: bytes) -> bytes:
    return lincomb([(p, 1), (q, -1)])


def is_identity(point: bytes) -> bool:
    return point == IDENTITY


def validate(point: bytes) -> bool:
    return point == IDENTITY or _backend.validate(point)


def reduce_scalar(value: int) -> int:
    return value % ORDER


def rand_scalar(rng) -> int:
    """Uniform nonzero scalar from an injected RNG (random.Random or os)."""
    while True:
        value = rng.getrandbits(256) % ORDER
        if value != 0:
            return value


def hash_to_scalar(*parts: bytes) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return int.from_bytes(h.digest(), "big") % ORDER


def hash_to_point(label: bytes) -> bytes:
    """Try-and-increment: H(label‖ctr) as a compressed x coordinate."""
    ctr = 0
    while True:
        digest = hashlib.sha256(label + ctr.to_bytes(4, "big")).digest()
        candidate = bytes([2 | (digest[0] & 1)]) + hashlib.sha256(
            digest + b"x").digest()
        if _backend.validate(candidate):
            return candidate
        ctr += 1


# System-wide commitment generators; labels are part of the wire contract.
_GEN_G: Optional[bytes] = None
_GEN_H: Optional[bytes] = None


def generator_g() -> bytes:
    global _GEN_G
    if _GEN_G is None:
        _GEN_G = hash_to_point(b"ipv8-g")
    return _GEN_G


def generator_h() -> bytes:
    global _GEN_H
    if _GEN_H is None:
        _GEN_H = hash_to_point(b"ipv8-h")
    return _GEN_H
