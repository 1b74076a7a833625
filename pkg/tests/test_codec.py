import pytest

from bftdsn.core.codec import decode_value, encode_value, pack, unpack
from bftdsn.core.exceptions import ShapeError
from bftdsn.core.models import Block, StorePayload, Transaction, TxKind, WeightTable
from bftdsn.protocol.messages import SyncRequest


def test_dict_encoding_ignores_insertion_order():
    assert encode_value({2: b"b", 1: b"a"}) == encode_value({1: b"a", 2: b"b"})


def test_nested_values_survive():
    payload = StorePayload(b"\x01" * 32, (5, 6, 7), 64, 150, 4)
    tx = Transaction(TxKind.STORE, 3, payload, b"sig")
    block = Block(height=2, parent_hash=b"\x00" * 32, proposer=1, txs=(tx,))
    restored = unpack(pack(block))
    assert restored == block
    assert restored.txs[0].kind is TxKind.STORE
    assert restored.block_hash == block.block_hash


def test_mutable_state_types_decode():
    table = WeightTable()
    table.record(0, {1: 2, 2: 1})
    table.record(4, {1: 2})
    assert decode_value(encode_value(table)) == table


def test_unregistered_type_is_refused():
    class Loose:
        pass

    with pytest.raises(ShapeError):
        encode_value(Loose())


@pytest.mark.parametrize(
    "frame",
    [
        b"",
        b"\x01\x3d\x00\x00",
        b"\x02" + pack(SyncRequest(1, 2))[1:],
        pack(SyncRequest(1, 2))[:-1],
        pack(SyncRequest(1, 2)) + b"\x00",
        b"\x01\x3d\x00\x00\x00\x01\xee",
    ],
)
def test_garbage_frames_raise_shape_error(frame):
    with pytest.raises(ShapeError):
        unpack(frame)


def test_bad_enum_value_is_a_shape_error():
    raw = bytearray(encode_value(TxKind.POS))
    raw[-1] = 99
    with pytest.raises(ShapeError):
        decode_value(bytes(raw))
