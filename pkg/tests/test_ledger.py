from dataclasses import replace

import pytest

from bftdsn.core.codec import encode_value
from bftdsn.core.exceptions import FutureHeightError, InvalidCertificateError
from bftdsn.core.ledger import (
    apply_block,
    commit_threshold,
    compute_f,
    expected_fingerprints,
    filter_valid,
    genesis_state,
    restore_state,
    validate_block,
    validate_tx,
    verify_certificate,
    weight_of,
)
from bftdsn.core.merkle_pos import (
    PosProof,
    SectorReplica,
    build_tree,
    challenge_index,
    initial_challenge_seed,
    prove,
    random_sector_data,
)
from bftdsn.core.models import (
    Block,
    EquivocationEvidence,
    EvidenceKind,
    FaultPayload,
    PledgePayload,
    PosPayload,
    RetrieveReportPayload,
    Transaction,
    TxKind,
    UpdatePayload,
    Vote,
    VoteStep,
    vote_message,
)
from bftdsn.core.wts import signing_key, wts_aggregate, wts_psign
from bftdsn.protocol.client import prepare_store
from tests.conftest import FRAGMENT_SIZE, SECTOR_SIZE, SEED

CLIENT = 10_000


def _commit(state, txs, signers=(1, 2, 3)):
    block = Block(
        height=state.height + 1,
        parent_hash=state.block_hash,
        proposer=1,
        txs=tuple(txs),
    )
    message = vote_message(block.height, 0, VoteStep.PRECOMMIT, block.block_hash)
    pp = state.config.pp
    parts = [wts_psign(message, signing_key(pp, signer)) for signer in signers]
    return block.with_certificate(0, wts_aggregate(parts, state.keyring()))


def _store_tx(state, data=b"hello storage" * 8):
    tx, _ = prepare_store(data, state, signing_key(state.config.pp, CLIENT))
    return tx


def _resign(tx, state, **changes):
    payload = replace(tx.payload, **changes)
    key = signing_key(state.config.pp, tx.submitter)
    return Transaction(tx.kind, tx.submitter, payload).signed(key)


def test_fault_bound():
    assert [compute_f(n) for n in (1, 3, 4, 7, 10, 40)] == [0, 0, 1, 2, 3, 13]
    assert commit_threshold(10) == 7
    assert commit_threshold(4) == 3


def test_genesis_weights(genesis):
    assert genesis.n == 5
    assert genesis.f == 1
    assert genesis.live_weights() == {1: 2, 2: 1, 3: 1, 4: 1}
    assert genesis.keyring().total_weight == 5


def test_store_is_valid(genesis):
    assert validate_tx(_store_tx(genesis), genesis).ok


def test_store_rejections(genesis):
    tx = _store_tx(genesis)
    assert validate_tx(replace(tx, signature=b""), genesis).reason == "bad-signature"
    assert validate_tx(_resign(tx, genesis, n=6), genesis).reason == "stale-n"
    wrong_id = _resign(tx, genesis, file_id=b"\x00" * 32)
    assert validate_tx(wrong_id, genesis).reason == "id-mismatch"
    short = _resign(tx, genesis, fingerprints=tx.payload.fingerprints[:-1])
    assert validate_tx(short, genesis).reason == "bad-shape"
    too_long = _resign(tx, genesis, file_length=tx.payload.chunk_size * 4 + 1)
    assert validate_tx(too_long, genesis).reason == "bad-size"


def test_store_too_big_for_sectors(genesis):
    tx = _store_tx(genesis, b"\x07" * (4 * SECTOR_SIZE + 8))
    assert validate_tx(tx, genesis).reason == "sector-full"


def test_applied_store_places_one_chunk_per_sector(genesis):
    tx = _store_tx(genesis)
    state = apply_block(genesis, _commit(genesis, [tx]))
    manifest = state.manifest(tx.payload.file_id)
    assert state.height == 1
    assert manifest.placement == (1, 2, 3, 4, 5)
    assert manifest.k == 4 and manifest.f == 1
    assert len(expected_fingerprints(manifest, state.config.fingerprint_params)) == 5
    assert all(state.sectors[sid].next_offset == manifest.chunk_size for sid in range(1, 6))
    assert validate_tx(tx, state).reason == "duplicate-file"


def test_certificate_needs_commit_weight(genesis):
    block = _commit(genesis, [], signers=(2, 3, 4))
    assert not verify_certificate(genesis, block).ok
    with pytest.raises(InvalidCertificateError):
        apply_block(genesis, block)
    assert verify_certificate(genesis, _commit(genesis, [], signers=(1, 2, 4))).ok


def test_block_shape_checks(genesis):
    tx = _store_tx(genesis)
    doubled = Block(1, genesis.block_hash, 1, (tx, tx))
    assert validate_block(genesis, doubled).reason == "duplicate-tx"
    orphan = Block(1, b"\x09" * 32, 1, ())
    assert validate_block(genesis, orphan).reason == "bad-parent"
    skipped = Block(2, genesis.block_hash, 1, ())
    assert validate_block(genesis, skipped).reason == "bad-height"


def test_filter_valid_keeps_a_valid_prefix(genesis):
    tx = _store_tx(genesis)
    forged = replace(_store_tx(genesis, b"other file"), signature=b"\x00" * 64)
    assert filter_valid(genesis, [tx, tx, forged], limit=10) == [tx]


def _pledge(state, owner, sector_id):
    data = random_sector_data(SEED, sector_id, SECTOR_SIZE)
    tree = build_tree(data, FRAGMENT_SIZE)
    seed = initial_challenge_seed(sector_id, state.config.genesis_hash)
    proof = prove(tree, challenge_index(seed, tree.leaf_count), sector_id, 0, seed)
    key = signing_key(state.config.pp, owner)
    payload = PledgePayload(sector_id=sector_id, root=tree.root, proof=proof)
    return Transaction(TxKind.PLEDGE, owner, payload).signed(key)


def test_pledge_adds_weight_from_next_height(genesis):
    tx = _pledge(genesis, owner=2, sector_id=6)
    assert validate_tx(tx, genesis).ok
    state = apply_block(genesis, _commit(genesis, [tx]))
    assert state.n == 6
    assert weight_of(state, 2, 0) == 1
    assert weight_of(state, 2, 1) == 2
    with pytest.raises(FutureHeightError):
        weight_of(state, 2, 2)
    assert validate_tx(tx, state).reason == "sector-exists"


def test_pledge_with_wrong_leaf(genesis):
    tx = _pledge(genesis, owner=2, sector_id=6)
    body = tx.payload
    bad_proof = replace(body.proof, leaf_data=b"\x00" * FRAGMENT_SIZE)
    bad = _resign(tx, genesis, proof=bad_proof)
    assert validate_tx(bad, genesis).reason == "pledge-proof-invalid"


def _pos(state, sector_trees, owner, sector_id, corrupt=False):
    record = state.sectors[sector_id]
    replica = SectorReplica(sector_id, sector_trees[sector_id])
    if corrupt:
        replica.erase(challenge_index(record.challenge_seed, replica.tree.leaf_count))
    proof = replica.respond(record.pos_epoch + 1, record.challenge_seed)
    key = signing_key(state.config.pp, owner)
    payload = PosPayload(sector_id=sector_id, root_height=state.height, proof=proof)
    return Transaction(TxKind.POS, owner, payload).signed(key)


def test_pos_advances_the_challenge(genesis, sector_trees):
    tx = _pos(genesis, sector_trees, owner=3, sector_id=4)
    assert validate_tx(tx, genesis).ok
    state = apply_block(genesis, _commit(genesis, [tx]))
    record = state.sectors[4]
    assert record.pos_epoch == 1
    assert record.challenge_seed == tx.payload.proof.digest()
    assert validate_tx(tx, state).reason == "bad-epoch"


def test_pos_rejections(genesis, sector_trees):
    bad = _pos(genesis, sector_trees, owner=3, sector_id=4, corrupt=True)
    assert validate_tx(bad, genesis).reason == "pos-invalid"
    stolen = _pos(genesis, sector_trees, owner=2, sector_id=4)
    assert validate_tx(stolen, genesis).reason == "not-owner"


def test_invalid_pos_evidence_removes_the_sector(genesis, sector_trees):
    inner = _pos(genesis, sector_trees, owner=3, sector_id=4, corrupt=True)
    fault = Transaction(
        TxKind.FAULT, 1, FaultPayload(EvidenceKind.POS_INVALID, 3, 4, inner)
    ).signed(signing_key(genesis.config.pp, 1))
    assert validate_tx(fault, genesis).ok
    state = apply_block(genesis, _commit(genesis, [fault]))
    assert not state.sectors[4].active
    assert state.n == 4
    assert weight_of(state, 3, 1) == 0


def test_valid_pos_is_not_evidence(genesis, sector_trees):
    inner = _pos(genesis, sector_trees, owner=3, sector_id=4)
    fault = Transaction(
        TxKind.FAULT, 1, FaultPayload(EvidenceKind.POS_INVALID, 3, 4, inner)
    ).signed(signing_key(genesis.config.pp, 1))
    assert validate_tx(fault, genesis).reason == "bad-evidence"


def _vote(pp, voter, block_hash):
    message = vote_message(1, 0, VoteStep.PREVOTE, block_hash)
    return Vote(1, 0, VoteStep.PREVOTE, block_hash, voter, wts_psign(message, signing_key(pp, voter)))


def test_equivocation_removes_every_sector_of_the_voter(genesis):
    pp = genesis.config.pp
    evidence = EquivocationEvidence(_vote(pp, 1, b"\x01" * 32), _vote(pp, 1, None))
    fault = Transaction(
        TxKind.FAULT, 2, FaultPayload(EvidenceKind.EQUIVOCATION, 1, 0, evidence)
    ).signed(signing_key(pp, 2))
    assert validate_tx(fault, genesis).ok
    state = apply_block(genesis, _commit(genesis, [fault]))
    assert state.sectors_of(1) == []
    assert state.n == 3


def test_same_vote_twice_is_not_equivocation(genesis):
    pp = genesis.config.pp
    vote = _vote(pp, 1, b"\x01" * 32)
    fault = Transaction(
        TxKind.FAULT, 2, FaultPayload(EvidenceKind.EQUIVOCATION, 1, 0, EquivocationEvidence(vote, vote))
    ).signed(signing_key(pp, 2))
    assert validate_tx(fault, genesis).reason == "bad-evidence"


def test_state_digest_is_deterministic(genesis):
    tx = _store_tx(genesis)
    block = _commit(genesis, [tx])
    first = apply_block(genesis, block)
    second = apply_block(genesis, block)
    assert first.digest() == second.digest()
    assert genesis.height == 0 and not genesis.files
    restored = restore_state(encode_value(first), first.config)
    assert restored.digest() == first.digest()


def test_malformed_payload_is_rejected(genesis):
    key = signing_key(genesis.config.pp, 1)
    tx = Transaction(TxKind.POS, 1, PosProof(1, 1, 0, b"", ())).signed(key)
    assert validate_tx(tx, genesis).reason == "bad-payload"


def _update(state, owner, sector_id, root=b"\x05" * 32, sequence=1):
    payload = UpdatePayload(sector_id=sector_id, root=root, sequence=sequence)
    key = signing_key(state.config.pp, owner)
    return Transaction(TxKind.UPDATE, owner, payload).signed(key)


def test_update_replaces_the_root_from_its_height(genesis):
    tx = _update(genesis, owner=3, sector_id=4)
    assert validate_tx(tx, genesis).ok
    state = apply_block(genesis, _commit(genesis, [tx]))
    record = state.sectors[4]
    assert record.root == b"\x05" * 32
    assert record.update_seq == 1
    assert record.root_at(0) == genesis.sectors[4].root
    assert record.root_at(1) == b"\x05" * 32
    assert validate_tx(tx, state).reason == "bad-sequence"
    assert validate_tx(_update(state, 3, 4, sequence=2), state).ok


def test_update_rejections(genesis, sector_trees):
    assert validate_tx(_update(genesis, 3, 99), genesis).reason == "unknown-sector"
    assert validate_tx(_update(genesis, 2, 4), genesis).reason == "not-owner"
    skipped = _update(genesis, 3, 4, sequence=2)
    assert validate_tx(skipped, genesis).reason == "bad-sequence"
    short = _update(genesis, 3, 4, root=b"\x05" * 5)
    assert validate_tx(short, genesis).reason == "bad-payload"

    inner = _pos(genesis, sector_trees, owner=3, sector_id=4, corrupt=True)
    fault = Transaction(
        TxKind.FAULT, 1, FaultPayload(EvidenceKind.POS_INVALID, 3, 4, inner)
    ).signed(signing_key(genesis.config.pp, 1))
    state = apply_block(genesis, _commit(genesis, [fault]))
    assert validate_tx(_update(state, 3, 4), state).reason == "inactive-sector"


def test_sector_without_proofs_is_removed_after_the_window(
    ledger_config, pledges, sector_trees
):
    state = genesis_state(replace(ledger_config, pos_grace=2), pledges)
    owners = {sid: owner for owner, sid, _ in pledges}
    proofs = [_pos(state, sector_trees, owners[sid], sid) for sid in (1, 2, 3, 5)]
    state = apply_block(state, _commit(state, proofs))
    state = apply_block(state, _commit(state, []))
    assert state.sectors[4].active
    state = apply_block(state, _commit(state, []))
    assert state.height == 3
    assert not state.sectors[4].active
    assert state.sectors[4].faulted_height == 3
    assert state.n == 4
    assert weight_of(state, 3, 3) == 0
    assert all(state.sectors[sid].active for sid in (1, 2, 3, 5))


def test_manifest_is_dropped_at_expiry(ledger_config, pledges):
    state = genesis_state(replace(ledger_config, file_ttl=2), pledges)
    tx = _store_tx(state)
    state = apply_block(state, _commit(state, [tx]))
    file_id = tx.payload.file_id
    assert state.manifest(file_id).expiry_height == 3
    state = apply_block(state, _commit(state, []))
    assert state.manifest(file_id) is not None
    state = apply_block(state, _commit(state, []))
    assert state.manifest(file_id) is None
    assert validate_tx(tx, state).ok


def _report(state, miner, session=1):
    payload = RetrieveReportPayload(
        file_id=b"\x03" * 32, retrieval_miner=miner, session=session, reason="timeout"
    )
    key = signing_key(state.config.pp, CLIENT)
    return Transaction(TxKind.RETRIEVE_REPORT, CLIENT, payload).signed(key)


def test_retrieve_reports_count_against_the_retrieval_miner(genesis):
    first = _report(genesis, miner=3)
    assert validate_tx(first, genesis).ok
    second = _report(genesis, miner=3, session=2)
    state = apply_block(genesis, _commit(genesis, [first, second]))
    assert state.report_counts == {3: 2}
    assert validate_tx(first, state).reason == "duplicate-report"
    assert state.live_weights() == genesis.live_weights()
