"""Ledger state machine: transaction validity, block application, weights.

A block at height ``h`` is validated and applied against the state committed
at ``h - 1``; transactions run in order on a working copy, so a later
transaction sees the effects of earlier ones in the same block. Weight
changes are recorded at ``h`` and only count for votes on ``h + 1`` onward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

from bftdsn.core.codec import decode_value, encode_value, wire_type
from bftdsn.core.exceptions import (
    FutureHeightError,
    InvalidBlockError,
    InvalidCertificateError,
)
from bftdsn.core.fingerprint import (
    BLOCK_SIZE,
    Fingerprint,
    FingerprintParams,
    hf_compute,
    hf_encode,
)
from bftdsn.core.galois_rs import build_generator
from bftdsn.core.merkle_pos import initial_challenge_seed, verify_proof
from bftdsn.core.models import (
    Block,
    EquivocationEvidence,
    EvidenceKind,
    FaultPayload,
    FileManifest,
    PartialEvidence,
    PledgePayload,
    PosPayload,
    RetrieveReportPayload,
    SectorRecord,
    SignedChunk,
    StorePayload,
    Transaction,
    TxKind,
    UpdatePayload,
    Vote,
    VoteStep,
    WeightTable,
    vote_message,
)
from bftdsn.core.utils import HASH_SIZE, hash_bytes, u64
from bftdsn.core.wts import (
    AggregateSignature,
    KeyRing,
    PublicParams,
    chunk_message,
    keyring,
    partial_valid,
    public_key,
    signature_valid,
    wts_verify,
)
from bftdsn.infra.settings import SettingsLoader

logger = logging.getLogger("bftdsn.sim.ledger")


class Verdict(NamedTuple):
    ok: bool
    reason: str


OK = Verdict(True, "ok")


def compute_f(n: int) -> int:
    return max(0, (n - 1) // 3)


def commit_threshold(total_weight: int) -> int:
    """``n - f`` for a table whose weights add up to ``total_weight``."""
    return total_weight - compute_f(total_weight)


def compute_file_id(fingerprints: Sequence[int]) -> bytes:
    return hash_bytes(b"".join(u64(value) for value in fingerprints))


@dataclass(frozen=True)
class LedgerConfig:
    pp: PublicParams
    genesis_hash: bytes
    sector_size: int
    fragment_size: int
    pos_grace: int = 10
    file_ttl: int = 0
    key_epoch: int = 50
    max_block_txs: int = 256

    @classmethod
    def from_settings(
        cls, pp: PublicParams, genesis_hash: bytes, **overrides: int
    ) -> "LedgerConfig":
        settings = SettingsLoader()
        values = {
            "sector_size": settings.get_int("SECTOR_SIZE"),
            "fragment_size": settings.get_int("FRAGMENT_SIZE"),
            "pos_grace": settings.get_int("POS_GRACE_HEIGHTS"),
            "file_ttl": settings.get_int("FILE_TTL_HEIGHTS"),
            "key_epoch": settings.get_int("KEY_EPOCH_HEIGHTS"),
            "max_block_txs": settings.get_int("MAX_BLOCK_TXS"),
        }
        values.update(overrides)
        return cls(pp=pp, genesis_hash=genesis_hash, **values)

    @property
    def fingerprint_params(self) -> FingerprintParams:
        return FingerprintParams.from_genesis(self.genesis_hash)

    @property
    def tree_depth(self) -> int:
        return (self.sector_size // self.fragment_size).bit_length() - 1

    def key_height(self, height: int) -> int:
        if self.key_epoch <= 1:
            return height
        return height - height % self.key_epoch


@wire_type(33)
@dataclass
class LedgerState:
    height: int
    block_hash: bytes
    sectors: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    weights: WeightTable = field(default_factory=WeightTable)
    report_counts: dict = field(default_factory=dict)
    report_ids: frozenset = frozenset()
    config: LedgerConfig | None = field(
        default=None, compare=False, repr=False, metadata={"wire": False}
    )

    def copy(self) -> "LedgerState":
        return LedgerState(
            height=self.height,
            block_hash=self.block_hash,
            sectors={sid: record.copy() for sid, record in self.sectors.items()},
            files=dict(self.files),
            weights=self.weights.copy(),
            report_counts=dict(self.report_counts),
            report_ids=self.report_ids,
            config=self.config,
        )

    def digest(self) -> bytes:
        return hash_bytes(encode_value(self))

    def active_sectors(self) -> list[int]:
        return sorted(sid for sid, record in self.sectors.items() if record.active)

    def sectors_of(self, miner: int) -> list[int]:
        return sorted(
            sid
            for sid, record in self.sectors.items()
            if record.active and record.owner == miner
        )

    def live_weights(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for record in self.sectors.values():
            if record.active:
                counts[record.owner] = counts.get(record.owner, 0) + 1
        return counts

    @property
    def n(self) -> int:
        return len(self.active_sectors())

    @property
    def f(self) -> int:
        return compute_f(self.n)

    def keyring(self, height: int | None = None) -> KeyRing:
        at = self.height if height is None else height
        return keyring(self.config.pp, self.weights.at(at), at)

    def manifest(self, file_id: bytes) -> FileManifest | None:
        return self.files.get(file_id)


def genesis_hash_of(seed: int, pledges: Sequence[tuple[int, int, bytes]]) -> bytes:
    return hash_bytes(b"genesis", u64(seed), encode_value(tuple(pledges)))


def genesis_state(
    config: LedgerConfig, pledges: Sequence[tuple[int, int, bytes]]
) -> LedgerState:
    """Height-0 state holding the initial ``(owner, sector_id, root)`` pledges."""
    state = LedgerState(height=0, block_hash=config.genesis_hash, config=config)
    for owner, sector_id, root in pledges:
        state.sectors[sector_id] = SectorRecord(
            sector_id=sector_id,
            owner=owner,
            root=root,
            pledged_height=0,
            challenge_seed=initial_challenge_seed(sector_id, config.genesis_hash),
        )
    state.weights.record(0, state.live_weights())
    return state


def weight_of(state: LedgerState, miner: int, height: int) -> int:
    if height > state.height:
        raise FutureHeightError(height, state.height)
    return state.weights.weight_of(miner, height)


@lru_cache(maxsize=1024)
def _encoded(
    fingerprints: tuple[int, ...], n: int, f: int, point: int
) -> tuple[Fingerprint, ...]:
    gen = build_generator(n - f, f)
    data = [Fingerprint(value=value, point=point) for value in fingerprints]
    return tuple(hf_encode(data, gen))


def expected_fingerprints(
    manifest: FileManifest, params: FingerprintParams
) -> tuple[Fingerprint, ...]:
    """The certified fingerprint of every chunk ``1..n`` of a file."""
    return _encoded(manifest.fingerprints, manifest.n, manifest.f, params.point)


def _tx_signed(state: LedgerState, tx: Transaction) -> bool:
    return signature_valid(state.config.pp, tx.submitter, tx.signing_bytes(), tx.signature)


def _vote_signed(state: LedgerState, vote: Vote) -> bool:
    part = vote.signature
    if part.signer != vote.voter or part.message_digest != hash_bytes(vote.message):
        return False
    ring = KeyRing(
        security_bits=state.config.pp.security_bits,
        height=state.height,
        public_keys={vote.voter: _public(state, vote.voter)},
        weights={},
    )
    return partial_valid(part, ring)


def _public(state: LedgerState, node: int) -> bytes:
    return public_key(state.config.pp, node)


def _check_store(state: LedgerState, tx: Transaction) -> Verdict:
    body = tx.payload
    if not isinstance(body, StorePayload):
        return Verdict(False, "bad-payload")
    n = state.n
    if body.n != n:
        return Verdict(False, "stale-n")
    if n < 4:
        return Verdict(False, "too-few-sectors")
    k = n - compute_f(n)
    if len(body.fingerprints) != k:
        return Verdict(False, "bad-shape")
    if compute_file_id(body.fingerprints) != body.file_id:
        return Verdict(False, "id-mismatch")
    if body.file_id in state.files:
        return Verdict(False, "duplicate-file")
    unit = k * BLOCK_SIZE
    padded = k * body.chunk_size
    if (
        body.chunk_size <= 0
        or body.chunk_size % BLOCK_SIZE
        or not padded - unit < body.file_length <= padded
    ):
        return Verdict(False, "bad-size")
    size = state.config.sector_size
    for sid in state.active_sectors():
        if state.sectors[sid].next_offset + body.chunk_size > size:
            return Verdict(False, "sector-full")
    return OK


def _check_pledge(state: LedgerState, tx: Transaction) -> Verdict:
    body = tx.payload
    if not isinstance(body, PledgePayload):
        return Verdict(False, "bad-payload")
    if body.sector_id in state.sectors:
        return Verdict(False, "sector-exists")
    proof = body.proof
    seed = initial_challenge_seed(body.sector_id, state.config.genesis_hash)
    if (
        proof.sector_id != body.sector_id
        or proof.epoch != 0
        or proof.challenge_seed != seed
        or len(proof.path) != state.config.tree_depth
        or len(proof.leaf_data) != state.config.fragment_size
        or not verify_proof(body.root, proof)
    ):
        return Verdict(False, "pledge-proof-invalid")
    return OK


def _proof_root(state: LedgerState, body: PosPayload) -> bytes | None:
    grace = state.config.pos_grace
    if body.root_height > state.height:
        return None
    if grace > 0 and body.root_height < state.height - grace:
        return None
    record = state.sectors[body.sector_id]
    return record.root_at(body.root_height)


def _check_pos(state: LedgerState, tx: Transaction) -> Verdict:
    body = tx.payload
    if not isinstance(body, PosPayload):
        return Verdict(False, "bad-payload")
    record = state.sectors.get(body.sector_id)
    if record is None:
        return Verdict(False, "unknown-sector")
    if not record.active:
        return Verdict(False, "inactive-sector")
    if record.owner != tx.submitter:
        return Verdict(False, "not-owner")
    proof = body.proof
    if (
        proof.sector_id != body.sector_id
        or proof.epoch != record.pos_epoch + 1
        or proof.challenge_seed != record.challenge_seed
    ):
        return Verdict(False, "bad-epoch")
    root = _proof_root(state, body)
    if root is None:
        return Verdict(False, "stale-root")
    if len(proof.path) != state.config.tree_depth or not verify_proof(root, proof):
        return Verdict(False, "pos-invalid")
    return OK


def _check_fault(state: LedgerState, tx: Transaction) -> Verdict:
    body = tx.payload
    if not isinstance(body, FaultPayload):
        return Verdict(False, "bad-payload")
    if not state.sectors_of(body.accused):
        return Verdict(False, "no-weight")

    if body.kind is EvidenceKind.POS_INVALID:
        inner = body.evidence
        if not isinstance(inner, Transaction) or inner.kind is not TxKind.POS:
            return Verdict(False, "bad-evidence")
        proof_body = inner.payload
        record = state.sectors.get(getattr(proof_body, "sector_id", -1))
        if (
            record is None
            or not record.active
            or record.owner != body.accused
            or inner.submitter != body.accused
            or proof_body.sector_id != body.sector_id
            or proof_body.proof.challenge_seed != record.challenge_seed
            or not _tx_signed(state, inner)
        ):
            return Verdict(False, "bad-evidence")
        root = _proof_root(state, proof_body)
        if root is None or verify_proof(root, proof_body.proof):
            return Verdict(False, "bad-evidence")
        return OK

    if body.kind is EvidenceKind.EQUIVOCATION:
        evidence = body.evidence
        if (
            not isinstance(evidence, EquivocationEvidence)
            or not evidence.first.conflicts_with(evidence.second)
            or evidence.first.voter != body.accused
            or not _vote_signed(state, evidence.first)
            or not _vote_signed(state, evidence.second)
        ):
            return Verdict(False, "bad-evidence")
        return OK

    if body.kind is EvidenceKind.BAD_CHUNK:
        chunk = body.evidence
        if not isinstance(chunk, SignedChunk) or chunk.encoder != body.accused:
            return Verdict(False, "bad-evidence")
        manifest = state.files.get(chunk.file_id)
        if manifest is None or not 1 <= chunk.index <= manifest.n:
            return Verdict(False, "unknown-file")
        if not signature_valid(
            state.config.pp, chunk.encoder, chunk.signing_bytes(), chunk.signature
        ):
            return Verdict(False, "bad-evidence")
        params = state.config.fingerprint_params
        expected = expected_fingerprints(manifest, params)[chunk.index - 1]
        if (
            len(chunk.payload) == manifest.chunk_size
            and hf_compute(chunk.payload, params).value == expected.value
        ):
            return Verdict(False, "bad-evidence")
        return OK

    if body.kind is EvidenceKind.BAD_PARTIAL:
        evidence = body.evidence
        if not isinstance(evidence, PartialEvidence):
            return Verdict(False, "bad-evidence")
        manifest = state.files.get(evidence.file_id)
        if manifest is None or not 1 <= evidence.index <= manifest.n:
            return Verdict(False, "unknown-file")
        part = evidence.partial
        params = state.config.fingerprint_params
        expected = expected_fingerprints(manifest, params)[evidence.index - 1]
        message = chunk_message(
            evidence.file_id, evidence.index, u64(evidence.fingerprint)
        )
        ring = KeyRing(
            security_bits=state.config.pp.security_bits,
            height=state.height,
            public_keys={part.signer: _public(state, part.signer)},
            weights={},
        )
        if (
            part.signer != body.accused
            or evidence.fingerprint == expected.value
            or not partial_valid(part, ring, hash_bytes(message))
        ):
            return Verdict(False, "bad-evidence")
        return OK

    return Verdict(False, "bad-evidence")


def _report_id(tx: Transaction) -> bytes:
    body = tx.payload
    return hash_bytes(
        body.file_id, u64(body.retrieval_miner), u64(tx.submitter), u64(body.session)
    )


def _check_report(state: LedgerState, tx: Transaction) -> Verdict:
    if not isinstance(tx.payload, RetrieveReportPayload):
        return Verdict(False, "bad-payload")
    if _report_id(tx) in state.report_ids:
        return Verdict(False, "duplicate-report")
    return OK


def _check_update(state: LedgerState, tx: Transaction) -> Verdict:
    body = tx.payload
    if not isinstance(body, UpdatePayload):
        return Verdict(False, "bad-payload")
    record = state.sectors.get(body.sector_id)
    if record is None:
        return Verdict(False, "unknown-sector")
    if not record.active:
        return Verdict(False, "inactive-sector")
    if record.owner != tx.submitter:
        return Verdict(False, "not-owner")
    if body.sequence != record.update_seq + 1:
        return Verdict(False, "bad-sequence")
    if len(body.root) != HASH_SIZE:
        return Verdict(False, "bad-payload")
    return OK


_CHECKS = {
    TxKind.STORE: _check_store,
    TxKind.PLEDGE: _check_pledge,
    TxKind.POS: _check_pos,
    TxKind.FAULT: _check_fault,
    TxKind.RETRIEVE_REPORT: _check_report,
    TxKind.UPDATE: _check_update,
}


def validate_tx(tx: Transaction, state: LedgerState) -> Verdict:
    try:
        check = _CHECKS.get(tx.kind)
        if check is None:
            return Verdict(False, "unknown-kind")
        if not _tx_signed(state, tx):
            return Verdict(False, "bad-signature")
        return check(state, tx)
    except (AttributeError, TypeError, ValueError, IndexError) as exc:
        logger.debug("malformed tx %s: %s", tx.kind, exc)
        return Verdict(False, "malformed")


def _deactivate(state: LedgerState, sector_ids: Sequence[int], height: int, why: str) -> None:
    for sid in sector_ids:
        record = state.sectors[sid]
        if record.active:
            record.active = False
            record.faulted_height = height
            logger.info(
                "sector=%s owner=%s removed at height=%s reason=%s",
                sid,
                record.owner,
                height,
                why,
            )


def _apply_tx(state: LedgerState, tx: Transaction, height: int) -> None:
    config = state.config
    body = tx.payload
    if tx.kind is TxKind.STORE:
        placement = tuple(state.active_sectors())
        offsets = []
        for sid in placement:
            record = state.sectors[sid]
            offsets.append(record.next_offset)
            record.next_offset += body.chunk_size
        n = len(placement)
        state.files[body.file_id] = FileManifest(
            file_id=body.file_id,
            fingerprints=tuple(body.fingerprints),
            chunk_size=body.chunk_size,
            file_length=body.file_length,
            n=n,
            f=compute_f(n),
            placement=placement,
            offsets=tuple(offsets),
            store_height=height,
            key_height=config.key_height(height),
            expiry_height=height + config.file_ttl if config.file_ttl > 0 else 0,
            submitter=tx.submitter,
        )
    elif tx.kind is TxKind.PLEDGE:
        state.sectors[body.sector_id] = SectorRecord(
            sector_id=body.sector_id,
            owner=tx.submitter,
            root=body.root,
            pledged_height=height,
            challenge_seed=body.proof.digest(),
            last_pos_height=height,
        )
    elif tx.kind is TxKind.POS:
        record = state.sectors[body.sector_id]
        record.pos_epoch = body.proof.epoch
        record.challenge_seed = body.proof.digest()
        record.last_pos_height = height
    elif tx.kind is TxKind.FAULT:
        if body.kind is EvidenceKind.POS_INVALID:
            targets = [body.sector_id]
        else:
            targets = state.sectors_of(body.accused)
        _deactivate(state, targets, height, body.kind.name.lower())
    elif tx.kind is TxKind.RETRIEVE_REPORT:
        miner = body.retrieval_miner
        state.report_counts[miner] = state.report_counts.get(miner, 0) + 1
        state.report_ids = state.report_ids | {_report_id(tx)}
    elif tx.kind is TxKind.UPDATE:
        record = state.sectors[body.sector_id]
        keep_from = height - config.pos_grace if config.pos_grace > 0 else 0
        record.set_root(height, body.root, keep_from)
        record.update_seq = body.sequence


def _end_of_block(state: LedgerState, height: int) -> None:
    grace = state.config.pos_grace
    if grace > 0:
        missed = [
            sid
            for sid in state.active_sectors()
            if height - state.sectors[sid].last_pos_height > grace
        ]
        _deactivate(state, missed, height, "missed-pos")
    for file_id in [fid for fid, m in state.files.items() if m.expires_at(height)]:
        del state.files[file_id]
        logger.info("file=%s expired at height=%s", file_id.hex()[:12], height)
    state.weights.record(height, state.live_weights())


def _execute(state: LedgerState, block: Block) -> LedgerState:
    height = state.height + 1
    if block.height != height:
        raise InvalidBlockError(block.height, "bad-height")
    if block.parent_hash != state.block_hash:
        raise InvalidBlockError(height, "bad-parent")
    if len(block.txs) > state.config.max_block_txs:
        raise InvalidBlockError(height, "too-many-txs")
    if len({tx.tx_id for tx in block.txs}) != len(block.txs):
        raise InvalidBlockError(height, "duplicate-tx")

    working = state.copy()
    for tx in block.txs:
        verdict = validate_tx(tx, working)
        if not verdict.ok:
            raise InvalidBlockError(height, f"{tx.kind.name.lower()}:{verdict.reason}")
        _apply_tx(working, tx, height)
    _end_of_block(working, height)
    working.height = height
    working.block_hash = block.block_hash
    return working


def validate_block(state: LedgerState, block: Block) -> Verdict:
    try:
        _execute(state, block)
    except InvalidBlockError as exc:
        return Verdict(False, exc.reason)
    return OK


def filter_valid(state: LedgerState, txs: Sequence[Transaction], limit: int) -> list[Transaction]:
    """Greedy prefix of ``txs`` that forms a valid block body on ``state``."""
    working = state.copy()
    chosen: list[Transaction] = []
    seen: set[bytes] = set()
    for tx in txs:
        if len(chosen) >= limit:
            break
        if tx.tx_id in seen or not validate_tx(tx, working).ok:
            continue
        _apply_tx(working, tx, state.height + 1)
        chosen.append(tx)
        seen.add(tx.tx_id)
    return chosen


def verify_certificate(state: LedgerState, block: Block) -> Verdict:
    certificate = block.certificate
    if not isinstance(certificate, AggregateSignature):
        return Verdict(False, "missing-certificate")
    ring = state.keyring()
    message = vote_message(block.height, block.commit_round, VoteStep.PRECOMMIT, block.block_hash)
    if not wts_verify(message, certificate, ring, commit_threshold(ring.total_weight)):
        return Verdict(False, "weight-below-threshold")
    return OK


def apply_block(state: LedgerState, block: Block) -> LedgerState:
    verdict = verify_certificate(state, block)
    if not verdict.ok:
        raise InvalidCertificateError(block.height, verdict.reason)
    new_state = _execute(state, block)
    logger.debug(
        "height=%s txs=%s n=%s digest=%s",
        new_state.height,
        len(block.txs),
        new_state.n,
        new_state.digest().hex()[:12],
    )
    return new_state


def restore_state(raw: bytes, config: LedgerConfig) -> LedgerState:
    state = decode_value(raw)
    state.config = config
    return state
