import pytest

from bftdsn.core.exceptions import (
    InvalidPartialError,
    ParameterError,
    ShapeError,
    UnsupportedSecurityLevelError,
    WeightVectorError,
)
from bftdsn.core.wts import (
    AggregateSignature,
    keyring,
    partial_valid,
    signature_valid,
    signing_key,
    wts_aggregate,
    wts_keygen,
    wts_psign,
    wts_setup,
    wts_verify,
)

MESSAGE = b"block 7 round 0"


@pytest.fixture(scope="module")
def keys():
    return wts_keygen(wts_setup(128, 3), 4, [3, 1, 1, 2])


def test_unsupported_security_level():
    with pytest.raises(UnsupportedSecurityLevelError):
        wts_setup(192)


def test_keygen_validates_weights():
    pp = wts_setup(128)
    with pytest.raises(WeightVectorError):
        wts_keygen(pp, 3, [1, 1])
    with pytest.raises(ParameterError):
        wts_keygen(pp, 2, [1, 0])
    with pytest.raises(ParameterError):
        wts_keygen(pp, 2, [1, 1], miner_ids=[5, 5])


def test_threshold_counts_weight_not_signers(keys):
    ring = keys.verification_key
    heavy = wts_psign(MESSAGE, keys.signing_keys[1])
    light = wts_psign(MESSAGE, keys.signing_keys[2])
    sig = wts_aggregate([heavy, light], keys.aggregation_key)
    assert sig.effective_weight(ring) == 4
    assert wts_verify(MESSAGE, sig, ring, 4)
    assert not wts_verify(MESSAGE, sig, ring, 5)


def test_aggregate_dedupes_signers(keys):
    part = wts_psign(MESSAGE, keys.signing_keys[4])
    sig = wts_aggregate([part, part, part], keys.aggregation_key)
    assert sig.signers == [4]
    assert sig.effective_weight(keys.verification_key) == 2


def test_aggregate_names_the_bad_signer(keys):
    good = wts_psign(MESSAGE, keys.signing_keys[1])
    forged = wts_psign(MESSAGE, keys.signing_keys[2])
    forged = type(forged)(signer=3, message_digest=forged.message_digest, tag=forged.tag)
    with pytest.raises(InvalidPartialError) as excinfo:
        wts_aggregate([good, forged], keys.aggregation_key)
    assert excinfo.value.signer == 3


def test_aggregate_rejects_mixed_messages(keys):
    first = wts_psign(MESSAGE, keys.signing_keys[1])
    second = wts_psign(b"another message", keys.signing_keys[2])
    with pytest.raises(InvalidPartialError):
        wts_aggregate([first, second], keys.aggregation_key)


def test_verify_rejects_other_message(keys):
    parts = [wts_psign(MESSAGE, keys.signing_keys[i]) for i in (1, 2, 3, 4)]
    sig = wts_aggregate(parts, keys.aggregation_key)
    assert wts_verify(MESSAGE, sig, keys.verification_key, 7)
    assert not wts_verify(b"other", sig, keys.verification_key, 1)


def test_partial_from_unknown_signer(keys):
    stranger = signing_key(wts_setup(128, 3), 99)
    part = wts_psign(MESSAGE, stranger)
    assert not partial_valid(part, keys.verification_key)


def test_aggregate_bytes_round_trip(keys):
    parts = [wts_psign(MESSAGE, keys.signing_keys[i]) for i in (1, 4)]
    sig = wts_aggregate(parts, keys.aggregation_key)
    assert AggregateSignature.from_bytes(sig.to_bytes()) == sig
    with pytest.raises(ShapeError):
        AggregateSignature.from_bytes(sig.to_bytes()[:-3])


def test_keyring_drops_zero_weights():
    pp = wts_setup(128, 1)
    ring = keyring(pp, {1: 2, 2: 0, 3: 1}, height=5)
    assert ring.total_weight == 3
    assert not ring.knows(2)
    assert ring.height == 5


def test_ed448_level():
    pp = wts_setup(256, 1)
    key = signing_key(pp, 8)
    tag = key.sign(b"x" * 32)
    assert len(tag) == 114
    assert not signature_valid(pp, 8, b"payload", tag)
