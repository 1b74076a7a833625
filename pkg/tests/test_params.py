import pytest

from bftdsn.core.exceptions import EmptyFileError, InsufficientSectorsError
from bftdsn.protocol.params import (
    choose_params,
    join_file,
    retrieval_timeout_ms,
    split_file,
)


@pytest.mark.parametrize(
    ("n", "f", "k"),
    [(4, 1, 3), (7, 2, 5), (10, 3, 7), (40, 13, 27)],
)
def test_code_parameters(n, f, k):
    params = choose_params(n)
    assert (params.f, params.k, params.m) == (f, k, f)
    assert params.storage_ratio == pytest.approx(n / k)


def test_too_few_sectors():
    with pytest.raises(InsufficientSectorsError):
        choose_params(3)


def test_padding_granule():
    params = choose_params(7)
    assert params.unit == 40
    assert params.padded_length(1) == 40
    assert params.padded_length(40) == 40
    assert params.padded_length(41) == 80
    assert params.chunk_size(41) == 16


def test_split_pads_with_zeros_and_joins_back():
    params = choose_params(4)
    data = b"abcdefghij"
    chunks = split_file(data, params)
    assert len(chunks) == 3
    assert {len(chunk) for chunk in chunks} == {8}
    assert b"".join(chunks).endswith(bytes(24 - len(data)))
    assert join_file(chunks, len(data)) == data


def test_empty_file():
    with pytest.raises(EmptyFileError):
        split_file(b"", choose_params(4))


def test_retrieval_timeout_grows_with_size():
    small = retrieval_timeout_ms(10.0, 1_000.0, 1_000)
    large = retrieval_timeout_ms(10.0, 1_000.0, 1_000_000)
    assert small == 60.0
    assert large > small
    assert retrieval_timeout_ms(10.0, 0, 10**9) == 40.0
