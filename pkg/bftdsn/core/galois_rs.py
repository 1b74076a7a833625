"""Systematic Reed-Solomon erasure coding over GF(2^8).

The generator is derived from a full ``(K+M) x K`` Vandermonde matrix with
evaluation points ``0, 1, ..., K+M-1`` by right-multiplying with the inverse of
its top ``K x K`` block. Any ``K`` rows of the result stay invertible (MDS) and
the top block becomes the identity, so data chunks pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import galois
import numpy as np

from bftdsn.core.exceptions import (
    DecodeFailureError,
    FieldError,
    InsufficientChunksError,
    ShapeError,
)

FIELD_POLY = 0x11D
MAX_CODE_LENGTH = 255

GF256 = galois.GF(2**8, irreducible_poly=FIELD_POLY)

FieldElement = int


def _element(value: int) -> galois.FieldArray:
    if not isinstance(value, (int, np.integer)) or not 0 <= int(value) <= 255:
        raise FieldError(f"Элемент поля вне диапазона [0, 255]: {value!r}")
    return GF256(int(value))


def gf_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    return int(_element(a) * _element(b))


def gf_inv(a: FieldElement) -> FieldElement:
    if int(a) == 0:
        raise FieldError("У нуля нет обратного элемента")
    return int(np.reciprocal(_element(a)))


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    k: int
    m: int
    matrix: galois.FieldArray

    @property
    def n(self) -> int:
        return self.k + self.m

    def row(self, index: int) -> list[int]:
        """Row of chunk ``index`` (1-based) as plain integers."""
        return [int(value) for value in self.matrix[index - 1]]

    def rows(self, indices: Iterable[int]) -> galois.FieldArray:
        return self.matrix[[index - 1 for index in indices]]


@dataclass(frozen=True)
class ChunkSet:
    chunks: tuple[tuple[int, bytes], ...]

    def __post_init__(self) -> None:
        indices = [index for index, _ in self.chunks]
        if len(set(indices)) != len(indices):
            raise ShapeError("Индексы фрагментов должны быть различны")
        lengths = {len(payload) for _, payload in self.chunks}
        if len(lengths) > 1:
            raise ShapeError("Фрагменты должны иметь одинаковую длину")

    @classmethod
    def from_mapping(cls, payloads: dict[int, bytes]) -> "ChunkSet":
        return cls(tuple(sorted(payloads.items())))

    @property
    def indices(self) -> list[int]:
        return [index for index, _ in self.chunks]

    @property
    def chunk_size(self) -> int:
        return len(self.chunks[0][1]) if self.chunks else 0

    def payload(self, index: int) -> bytes:
        for chunk_index, payload in self.chunks:
            if chunk_index == index:
                return payload
        raise KeyError(index)

    def subset(self, indices: Iterable[int]) -> "ChunkSet":
        wanted = set(indices)
        return ChunkSet(tuple(c for c in self.chunks if c[0] in wanted))

    def __len__(self) -> int:
        return len(self.chunks)


@lru_cache(maxsize=256)
def build_generator(k: int, m: int) -> GeneratorMatrix:
    if k < 1 or m < 1:
        raise ShapeError(f"Нужно K >= 1 и M >= 1, получено K={k}, M={m}")
    n = k + m
    if n > MAX_CODE_LENGTH:
        raise FieldError(
            f"K+M={n} превышает ёмкость поля GF(2^8) ({MAX_CODE_LENGTH})"
        )

    alphas = GF256(np.arange(n, dtype=np.uint8))
    vandermonde = GF256.Zeros((n, k))
    column = GF256.Ones(n)
    for j in range(k):
        vandermonde[:, j] = column
        column = column * alphas

    generator = vandermonde @ np.linalg.inv(vandermonde[:k, :])
    generator.setflags(write=False)
    return GeneratorMatrix(k=k, m=m, matrix=generator)


def _to_field_matrix(payloads: Sequence[bytes]) -> galois.FieldArray:
    width = len(payloads[0]) if payloads else 0
    raw = np.frombuffer(b"".join(payloads), dtype=np.uint8)
    return GF256(raw.reshape(len(payloads), width))


def _to_rows(matrix: galois.FieldArray) -> list[bytes]:
    plain = matrix.view(np.ndarray).astype(np.uint8)
    return [plain[row].tobytes() for row in range(plain.shape[0])]


def rs_encode(data: Sequence[bytes], gen: GeneratorMatrix) -> ChunkSet:
    if len(data) != gen.k:
        raise ShapeError(f"Ожидалось {gen.k} блоков данных, получено {len(data)}")
    if len({len(block) for block in data}) > 1:
        raise ShapeError("Блоки данных должны иметь одинаковую длину")

    parity = _to_rows(gen.matrix[gen.k :] @ _to_field_matrix(data))
    payloads = [bytes(block) for block in data] + parity
    return ChunkSet(tuple((index + 1, payload) for index, payload in enumerate(payloads)))


def rs_decode(subset: ChunkSet, gen: GeneratorMatrix, k: int) -> list[bytes]:
    if k != gen.k:
        raise ShapeError(f"K={k} не совпадает с генератором (K={gen.k})")
    if len(subset) < k:
        raise InsufficientChunksError(len(subset), k)
    for index in subset.indices:
        if not 1 <= index <= gen.n:
            raise ShapeError(f"Индекс фрагмента {index} вне [1, {gen.n}]")

    ordered = sorted(subset.chunks)
    chosen, extra = ordered[:k], ordered[k:]
    chosen_indices = [index for index, _ in chosen]

    if chosen_indices == list(range(1, k + 1)) and not extra:
        return [payload for _, payload in chosen]

    system = gen.rows(chosen_indices)
    try:
        inverse = np.linalg.inv(system)
    except np.linalg.LinAlgError as exc:
        raise DecodeFailureError("вырожденная подсистема") from exc

    data = inverse @ _to_field_matrix([payload for _, payload in chosen])

    if extra:
        expected = _to_rows(gen.rows([index for index, _ in extra]) @ data)
        if any(payload != want for (_, payload), want in zip(extra, expected)):
            raise DecodeFailureError("фрагменты несовместны")

    return _to_rows(data)
