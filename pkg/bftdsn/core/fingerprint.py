"""Homomorphic fingerprints that commute with Reed-Solomon encoding.

GF(2^64) is built as the degree-8 extension of the coding field GF(2^8): an
8-byte block is the coefficient vector of a polynomial of degree < 8 over
GF(2^8) (byte ``t`` is the coefficient of ``x^t``), reduced modulo a fixed
primitive polynomial. GF(2^8) scalars then act byte by byte, which is exactly
what ``rs_encode`` does, so fingerprinting the parity chunks equals encoding
the data fingerprints.

A chunk of ``B`` blocks ``c_0 .. c_{B-1}`` fingerprints to the Horner value
``c_0 r^{B-1} + ... + c_{B-2} r + c_{B-1}`` at the network-wide point ``r``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import galois
import numpy as np

from bftdsn.core.codec import wire_type
from bftdsn.core.exceptions import ParameterError, ShapeError
from bftdsn.core.galois_rs import GF256, GeneratorMatrix
from bftdsn.core.utils import hash_bytes

BLOCK_SIZE = 8
EXTENSION_DEGREE = 8


@dataclass(frozen=True)
class FingerprintParams:
    point: int

    def __post_init__(self) -> None:
        if not 0 < self.point < 2**64:
            raise ParameterError("Точка вычисления должна быть ненулевым 64-битным")

    @classmethod
    def from_genesis(cls, genesis_hash: bytes) -> "FingerprintParams":
        seed = hash_bytes(b"fingerprint-point", genesis_hash)
        return cls(point=int.from_bytes(seed[:BLOCK_SIZE], "big") or 1)

    @property
    def point_bytes(self) -> bytes:
        return self.point.to_bytes(BLOCK_SIZE, "big")


@wire_type(1)
@dataclass(frozen=True)
class Fingerprint:
    value: int
    point: int

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(BLOCK_SIZE, "big")

    @classmethod
    def from_bytes(cls, raw: bytes, point: int) -> "Fingerprint":
        if len(raw) != BLOCK_SIZE:
            raise ShapeError(f"Отпечаток занимает {BLOCK_SIZE} байт, получено {len(raw)}")
        return cls(value=int.from_bytes(raw, "big"), point=point)


@lru_cache(maxsize=1)
def _reduction_rows() -> galois.FieldArray:
    """Rows ``x^8 .. x^14 mod P`` as coefficient vectors over GF(2^8)."""
    modulus = galois.primitive_poly(GF256.order, EXTENSION_DEGREE)
    coeffs = [int(c) for c in modulus.coeffs]  # highest degree first, monic
    tail = GF256(coeffs[1:][::-1])  # x^8 == p_0 + p_1 x + ... + p_7 x^7

    rows = [tail]
    for _ in range(EXTENSION_DEGREE - 2):
        previous = rows[-1]
        top = previous[EXTENSION_DEGREE - 1]
        shifted = GF256.Zeros(EXTENSION_DEGREE)
        shifted[1:] = previous[:-1]
        rows.append(shifted + top * tail)
    return GF256(np.stack([row.view(np.ndarray) for row in rows]))


def _fold(products: np.ndarray) -> galois.FieldArray:
    """Reduce an 8x8 table of coefficient products ``q[i, j]`` (for x^(i+j))."""
    plain = np.asarray(products.view(np.ndarray), dtype=np.uint8)
    poly = np.zeros(2 * EXTENSION_DEGREE - 1, dtype=np.uint8)
    for i in range(EXTENSION_DEGREE):
        poly[i : i + EXTENSION_DEGREE] ^= plain[i]
    low = GF256(poly[:EXTENSION_DEGREE])
    high = GF256(poly[EXTENSION_DEGREE:])
    return low + high @ _reduction_rows()


def _multiply(a: galois.FieldArray, b: galois.FieldArray) -> galois.FieldArray:
    return _fold(a[:, np.newaxis] * b[np.newaxis, :])


def _multiplication_matrix(p: galois.FieldArray) -> galois.FieldArray:
    """Matrix of ``v -> p * v`` acting on column coefficient vectors."""
    columns = []
    for j in range(EXTENSION_DEGREE):
        basis = GF256.Zeros(EXTENSION_DEGREE)
        basis[j] = 1
        columns.append(_multiply(p, basis).view(np.ndarray))
    return GF256(np.stack(columns, axis=1))


def _vector(raw: bytes) -> galois.FieldArray:
    return GF256(np.frombuffer(raw, dtype=np.uint8).copy())


class _PowerTable:
    """Grows ``r^0, r^1, ...`` by doubling; shared by all callers of one point."""

    def __init__(self, point: bytes) -> None:
        self._lock = threading.Lock()
        self._step = _vector(point)
        one = GF256.Zeros((1, EXTENSION_DEGREE))
        one[0, 0] = 1
        self._powers = one

    def first(self, count: int) -> galois.FieldArray:
        with self._lock:
            while self._powers.shape[0] < count:
                size = self._powers.shape[0]
                # r^size, obtained by squaring r^(size/2) (size is a power of two)
                jump = self._step if size == 1 else self._jump
                matrix = _multiplication_matrix(jump)
                block = self._powers @ matrix.T
                self._powers = np.concatenate([self._powers, block])
                self._jump = _multiply(jump, jump)
            return self._powers[:count]


_TABLES: dict[int, _PowerTable] = {}
_TABLES_LOCK = threading.Lock()


def _powers(params: FingerprintParams, count: int) -> galois.FieldArray:
    with _TABLES_LOCK:
        table = _TABLES.get(params.point)
        if table is None:
            table = _TABLES[params.point] = _PowerTable(params.point_bytes)
    return table.first(count)


def hf_compute(chunk: bytes, params: FingerprintParams) -> Fingerprint:
    if len(chunk) % BLOCK_SIZE:
        raise ShapeError(f"Длина фрагмента {len(chunk)} не кратна {BLOCK_SIZE}")
    blocks = len(chunk) // BLOCK_SIZE
    if blocks == 0:
        return Fingerprint(value=0, point=params.point)

    coefficients = GF256(
        np.frombuffer(chunk, dtype=np.uint8).reshape(blocks, EXTENSION_DEGREE)
    )
    weights = _powers(params, blocks)[::-1]
    value = _fold(coefficients.T @ weights)
    raw = value.view(np.ndarray).astype(np.uint8).tobytes()
    return Fingerprint.from_bytes(raw, params.point)


def hf_encode(data_fps: Sequence[Fingerprint], gen: GeneratorMatrix) -> list[Fingerprint]:
    if len(data_fps) != gen.k:
        raise ShapeError(f"Ожидалось {gen.k} отпечатков, получено {len(data_fps)}")
    points = {fp.point for fp in data_fps}
    if len(points) > 1:
        raise ParameterError("Отпечатки вычислены в разных точках")
    point = points.pop()

    stacked = GF256(
        np.frombuffer(b"".join(fp.to_bytes() for fp in data_fps), dtype=np.uint8)
        .reshape(gen.k, BLOCK_SIZE)
    )
    encoded = (gen.matrix @ stacked).view(np.ndarray).astype(np.uint8)
    return [Fingerprint.from_bytes(row.tobytes(), point) for row in encoded]


def hf_verify(chunk: bytes, expected: Fingerprint, params: FingerprintParams) -> bool:
    if expected.point != params.point or len(chunk) % BLOCK_SIZE:
        return False
    return hf_compute(chunk, params).value == expected.value
