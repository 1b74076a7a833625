from bftdsn.core.ledger import apply_block
from bftdsn.core.models import Block, VoteStep, vote_message
from bftdsn.core.wts import signing_key, wts_aggregate, wts_psign
from bftdsn.infra.database import ChainStore


def _empty_block(state):
    block = Block(height=state.height + 1, parent_hash=state.block_hash, proposer=2)
    message = vote_message(block.height, 0, VoteStep.PRECOMMIT, block.block_hash)
    parts = [wts_psign(message, signing_key(state.config.pp, i)) for i in (1, 2, 3)]
    return block.with_certificate(0, wts_aggregate(parts, state.keyring()))


def _grow(store, state, count):
    for _ in range(count):
        block = _empty_block(state)
        state = apply_block(state, block)
        store.append(block, state)
    return state


def test_fresh_store_is_empty(tmp_path, genesis):
    store = ChainStore(1, directory=tmp_path)
    assert store.log_path.exists()
    assert store.blocks() == []
    assert store.snapshot(genesis.config) is None
    state, blocks = store.replay(genesis)
    assert blocks == []
    assert state.digest() == genesis.digest()


def test_replay_rebuilds_the_state(tmp_path, genesis):
    store = ChainStore(1, directory=tmp_path, snapshot_every=2)
    final = _grow(store, genesis, 5)
    assert [block.height for block in store.blocks()] == [1, 2, 3, 4, 5]
    assert store.snapshot(genesis.config).height == 4
    state, _ = store.replay(genesis)
    assert state.height == 5
    assert state.digest() == final.digest()


def test_replay_without_snapshots(tmp_path, genesis):
    store = ChainStore(2, directory=tmp_path, snapshot_every=0)
    final = _grow(store, genesis, 3)
    assert not store.snapshot_path.exists()
    assert store.replay(genesis)[0].digest() == final.digest()


def test_truncated_tail_is_ignored(tmp_path, genesis):
    store = ChainStore(3, directory=tmp_path, snapshot_every=0)
    _grow(store, genesis, 2)
    raw = store.log_path.read_bytes()
    store.log_path.write_bytes(raw[:-3])
    assert len(store.blocks()) == 1


def test_corrupt_snapshot_falls_back_to_genesis(tmp_path, genesis):
    store = ChainStore(4, directory=tmp_path, snapshot_every=1)
    final = _grow(store, genesis, 2)
    store.snapshot_path.write_bytes(b"\x01\x02\x00\x00\x00\x02??")
    assert store.snapshot(genesis.config) is None
    assert store.replay(genesis)[0].digest() == final.digest()
