import os

import galois
import pytest

from bftdsn.core.exceptions import ParameterError, ShapeError
from bftdsn.core.fingerprint import (
    BLOCK_SIZE,
    EXTENSION_DEGREE,
    Fingerprint,
    FingerprintParams,
    hf_compute,
    hf_encode,
    hf_verify,
)
from bftdsn.core.galois_rs import GF256, build_generator, rs_encode
from bftdsn.core.utils import make_rng

PARAMS = FingerprintParams(point=0x1234_5678_9ABC_DEF1)


def test_point_must_be_nonzero_64_bit():
    with pytest.raises(ParameterError):
        FingerprintParams(point=0)
    with pytest.raises(ParameterError):
        FingerprintParams(point=2**64)
    assert FingerprintParams.from_genesis(b"\x01" * 32).point > 0


def test_empty_chunk_fingerprints_to_zero():
    assert hf_compute(b"", PARAMS).value == 0


def test_chunk_length_must_be_whole_blocks():
    with pytest.raises(ShapeError):
        hf_compute(b"x" * (BLOCK_SIZE + 1), PARAMS)


def test_single_block_is_its_own_fingerprint():
    block = bytes(range(1, 9))
    assert hf_compute(block, PARAMS).to_bytes() == block


def test_fingerprint_is_additive():
    a, b = os.urandom(64), os.urandom(64)
    xored = bytes(x ^ y for x, y in zip(a, b))
    assert hf_compute(xored, PARAMS).value == (
        hf_compute(a, PARAMS).value ^ hf_compute(b, PARAMS).value
    )


def test_encoding_commutes_with_fingerprints():
    gen = build_generator(5, 2)
    data = [os.urandom(96) for _ in range(5)]
    coded = rs_encode(data, gen)
    encoded = hf_encode([hf_compute(block, PARAMS) for block in data], gen)
    assert [fp.value for fp in encoded] == [
        hf_compute(coded.payload(i), PARAMS).value for i in coded.indices
    ]


def test_encode_checks_count_and_point():
    gen = build_generator(2, 1)
    one = Fingerprint(value=5, point=PARAMS.point)
    with pytest.raises(ShapeError):
        hf_encode([one], gen)
    with pytest.raises(ParameterError):
        hf_encode([one, Fingerprint(value=5, point=PARAMS.point + 1)], gen)


def test_verify_catches_a_flipped_bit():
    chunk = os.urandom(128)
    expected = hf_compute(chunk, PARAMS)
    assert hf_verify(chunk, expected, PARAMS)
    tampered = bytes([chunk[0] ^ 0x01]) + chunk[1:]
    assert not hf_verify(tampered, expected, PARAMS)


def test_verify_never_raises():
    expected = hf_compute(b"\x00" * 16, PARAMS)
    assert not hf_verify(b"\x00" * 15, expected, PARAMS)
    other = FingerprintParams(point=3)
    assert not hf_verify(b"\x00" * 16, expected, other)


def test_fingerprint_bytes_size():
    with pytest.raises(ShapeError):
        Fingerprint.from_bytes(b"\x00" * 7, PARAMS.point)


def _poly(raw):
    return galois.Poly(GF256(list(raw)), order="asc")


def _horner(blocks, point, modulus):
    """Reference value of ``b_0 r^{B-1} + ... + b_{B-1}`` by polynomial arithmetic."""
    r = _poly(point)
    acc = galois.Poly.Zero(GF256)
    for block in blocks:
        acc = (acc * r + _poly(block)) % modulus
    return bytes(int(c) for c in acc.coefficients(BLOCK_SIZE, order="asc"))


def test_two_block_chunk_matches_horner():
    modulus = galois.primitive_poly(GF256.order, EXTENSION_DEGREE)
    modulus = galois.Poly([int(c) for c in modulus.coeffs], field=GF256)
    rng = make_rng(5, "horner")
    for _ in range(20):
        first, second = rng.bytes(BLOCK_SIZE), rng.bytes(BLOCK_SIZE)
        expected = _horner([first, second], PARAMS.point_bytes, modulus)
        assert hf_compute(first + second, PARAMS).to_bytes() == expected


@pytest.mark.parametrize("n", [4, 7, 10, 13])
def test_fingerprints_of_coded_chunks_for_each_code(n):
    f = (n - 1) // 3
    gen = build_generator(n - f, f)
    rng = make_rng(n, "homomorphism")
    data = [rng.bytes(10 * BLOCK_SIZE) for _ in range(n - f)]
    coded = rs_encode(data, gen)
    encoded = hf_encode([hf_compute(block, PARAMS) for block in data], gen)
    assert len(encoded) == n
    assert encoded == [hf_compute(coded.payload(i), PARAMS) for i in coded.indices]


def test_every_single_bit_flip_is_rejected():
    rng = make_rng(6, "flips")
    chunk = rng.bytes(256)
    expected = hf_compute(chunk, PARAMS)
    for bit in rng.integers(0, len(chunk) * 8, size=1_000).tolist():
        tampered = bytearray(chunk)
        tampered[bit // 8] ^= 1 << (bit % 8)
        assert not hf_verify(bytes(tampered), expected, PARAMS)
