import os
from itertools import combinations

import pytest

from bftdsn.core.exceptions import (
    FieldError,
    InsufficientChunksError,
    ShapeError,
)
from bftdsn.core.galois_rs import (
    MAX_CODE_LENGTH,
    ChunkSet,
    build_generator,
    gf_inv,
    gf_mul,
    rs_decode,
    rs_encode,
)
from bftdsn.core.utils import make_rng


def _blocks(k, size, seed=0):
    return [bytes((seed + 31 * i + 7 * j) % 256 for j in range(size)) for i in range(k)]


def test_field_arithmetic():
    assert gf_mul(0, 77) == 0
    assert gf_mul(1, 77) == 77
    # 2 * 0x80 wraps through the reduction polynomial 0x11D
    assert gf_mul(2, 0x80) == 0x1D
    for a in (1, 2, 3, 0x53, 0xFF):
        assert gf_mul(a, gf_inv(a)) == 1


def test_inverse_of_zero_and_out_of_range():
    with pytest.raises(FieldError):
        gf_inv(0)
    with pytest.raises(FieldError):
        gf_mul(256, 1)


def test_generator_is_systematic():
    gen = build_generator(4, 2)
    assert gen.n == 6
    for i in range(1, 5):
        assert gen.row(i) == [1 if j == i - 1 else 0 for j in range(4)]


def test_generator_limits():
    with pytest.raises(ShapeError):
        build_generator(0, 2)
    with pytest.raises(ShapeError):
        build_generator(3, 0)
    with pytest.raises(FieldError):
        build_generator(200, MAX_CODE_LENGTH - 199)


def test_encode_keeps_data_chunks():
    gen = build_generator(5, 2)
    data = _blocks(5, 16)
    coded = rs_encode(data, gen)
    assert coded.indices == list(range(1, 8))
    assert [coded.payload(i) for i in range(1, 6)] == data


def test_any_k_chunks_decode():
    gen = build_generator(5, 2)
    data = _blocks(5, 24, seed=3)
    coded = rs_encode(data, gen)
    for dropped in [(1, 2), (6, 7), (2, 7), (3, 5)]:
        subset = coded.subset(i for i in coded.indices if i not in dropped)
        assert rs_decode(subset, gen, 5) == data


def test_decode_random_payload():
    gen = build_generator(7, 3)
    data = [os.urandom(40) for _ in range(7)]
    coded = rs_encode(data, gen)
    subset = coded.subset([2, 4, 5, 6, 8, 9, 10])
    assert rs_decode(subset, gen, 7) == data


def test_decode_needs_k_chunks():
    gen = build_generator(4, 2)
    coded = rs_encode(_blocks(4, 8), gen)
    with pytest.raises(InsufficientChunksError):
        rs_decode(coded.subset([1, 5, 6]), gen, 4)


def test_decode_rejects_mismatched_k():
    gen = build_generator(4, 2)
    coded = rs_encode(_blocks(4, 8), gen)
    with pytest.raises(ShapeError):
        rs_decode(coded, gen, 3)


def test_chunk_set_shape_checks():
    with pytest.raises(ShapeError):
        ChunkSet(((1, b"ab"), (1, b"cd")))
    with pytest.raises(ShapeError):
        ChunkSet(((1, b"ab"), (2, b"cde")))
    chunks = ChunkSet.from_mapping({3: b"cc", 1: b"aa"})
    assert chunks.indices == [1, 3]
    assert chunks.chunk_size == 2


def test_encode_rejects_wrong_block_count():
    gen = build_generator(3, 1)
    with pytest.raises(ShapeError):
        rs_encode(_blocks(2, 8), gen)


def _scaled(scalar, block):
    return bytes(gf_mul(scalar, byte) for byte in block)


def _xored(a, b):
    return bytes(x ^ y for x, y in zip(a, b))


def test_every_nonzero_element_has_an_inverse():
    for a in range(1, 256):
        inverse = gf_inv(a)
        assert gf_mul(a, inverse) == 1
        assert gf_inv(inverse) == a


def test_field_axioms():
    rng = make_rng(8, "field")
    for a, b, c in rng.integers(0, 256, size=(2_000, 3)).tolist():
        assert gf_mul(a, b) == gf_mul(b, a)
        assert gf_mul(a, gf_mul(b, c)) == gf_mul(gf_mul(a, b), c)
        # addition is xor
        assert gf_mul(a, b ^ c) == gf_mul(a, b) ^ gf_mul(a, c)


@pytest.mark.parametrize("scalar", [0, 1, 2, 0x8E, 0xFF])
def test_encoding_is_linear(scalar):
    gen = build_generator(5, 2)
    rng = make_rng(scalar, "linear")
    a = [rng.bytes(16) for _ in range(5)]
    b = [rng.bytes(16) for _ in range(5)]
    coded_a, coded_b = rs_encode(a, gen), rs_encode(b, gen)
    summed = rs_encode([_xored(x, y) for x, y in zip(a, b)], gen)
    scaled = rs_encode([_scaled(scalar, x) for x in a], gen)
    for i in coded_a.indices:
        assert summed.payload(i) == _xored(coded_a.payload(i), coded_b.payload(i))
        assert scaled.payload(i) == _scaled(scalar, coded_a.payload(i))


@pytest.mark.parametrize(("k", "m"), [(3, 1), (5, 2), (7, 3), (9, 4)])
def test_every_k_subset_decodes(k, m):
    gen = build_generator(k, m)
    data = _blocks(k, 8, seed=k)
    coded = rs_encode(data, gen)
    for subset in combinations(coded.indices, k):
        assert rs_decode(coded.subset(subset), gen, k) == data
