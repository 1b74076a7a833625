"""Miner node: SW-BFT participant plus every storage-side role.

A miner votes in consensus, signs chunk fingerprints for committed STORE
transactions, hosts the chunks of its own sectors, encodes files handed to it
by clients, serves retrievals, proves storage for its sectors and keeps its
ledger replica in step with the chain, catching up through SYNC when it
falls behind. All of it runs on ``Network`` callbacks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from bftdsn.core.codec import pack, unpack
from bftdsn.core.exceptions import (
    CodingError,
    InvalidBlockError,
    InvalidCertificateError,
    InvalidVoteSignatureError,
    ShapeError,
    UnknownVoterError,
)
from bftdsn.core.fingerprint import Fingerprint, hf_compute
from bftdsn.core.galois_rs import ChunkSet, build_generator, rs_decode, rs_encode
from bftdsn.core.ledger import (
    LedgerState,
    apply_block,
    compute_f,
    compute_file_id,
    expected_fingerprints,
    filter_valid,
    validate_block,
    validate_tx,
)
from bftdsn.core.merkle_pos import (
    SectorReplica,
    SectorTree,
    initial_challenge_seed,
    update_tree,
)
from bftdsn.core.models import (
    Block,
    EquivocationEvidence,
    EvidenceKind,
    FaultPayload,
    FileManifest,
    PartialEvidence,
    PledgePayload,
    PosPayload,
    SignedChunk,
    Transaction,
    TxKind,
    UpdatePayload,
    Vote,
)
from bftdsn.core.swbft import (
    Broadcast,
    Decide,
    Proposal,
    ReportEquivocation,
    ScheduleTimeout,
    SwBftCore,
)
from bftdsn.core.utils import hash_bytes, short_hex, u64
from bftdsn.core.wts import (
    AggregateSignature,
    KeyRing,
    PartialSignature,
    chunk_message,
    partial_valid,
    signature_valid,
    signing_key,
    wts_aggregate,
    wts_psign,
    wts_verify,
)
from bftdsn.infra.settings import SettingsLoader
from bftdsn.protocol.messages import (
    ChunkNack,
    ChunkRequest,
    ChunkResponse,
    ChunkTransfer,
    EncoderNack,
    FileUpload,
    PartialTransfer,
    RetrieveRequest,
    RetrieveResponse,
    StorageAck,
    SyncRequest,
    SyncResponse,
    TxSubmit,
    ack_message,
)
from bftdsn.protocol.params import join_file, retrieval_timeout_ms
from bftdsn.sim.netsim import Event, Network

logger = logging.getLogger("bftdsn.sim.protocol")

RESEND_AFTER_HEIGHTS = 3
SYNC_BATCH = 64

# rejections that no later state can turn into acceptance
_FINAL_REJECTIONS = frozenset(
    {
        "bad-signature",
        "bad-payload",
        "bad-shape",
        "id-mismatch",
        "malformed",
        "not-owner",
        "pledge-proof-invalid",
        "pos-invalid",
        "unknown-kind",
    }
)


@dataclass(frozen=True)
class NodeConfig:
    delta_ms: float
    block_interval_ms: float = 0.0
    pos_interval: int = 3
    mempool_ttl: int = 40
    chunk_buffer: int = 4
    early_buffer: int = 256
    early_files: int = 64
    track_digests: bool = True

    @classmethod
    def from_settings(cls, **overrides: Any) -> "NodeConfig":
        settings = SettingsLoader()
        values: dict[str, Any] = {
            "delta_ms": float(settings.get("DELTA_MS")),
            "block_interval_ms": float(settings.get("BLOCK_INTERVAL_MS")),
            "pos_interval": settings.get_int("POS_INTERVAL_HEIGHTS"),
            "mempool_ttl": settings.get_int("MEMPOOL_TTL_HEIGHTS"),
        }
        values.update(overrides)
        return cls(**values)


class Behaviour:
    """Honest handlers. Adversary strategies override the ones they attack."""

    name = "honest"
    byzantine = False

    def attach(self, node: "MinerNode") -> None:
        pass

    def outgoing(
        self, node: "MinerNode", message: Proposal | Vote
    ) -> list[tuple[Proposal | Vote, Sequence[int] | None]]:
        """Consensus messages to send; ``None`` as receivers means every peer."""
        return [(message, None)]

    def partial_values(
        self, node: "MinerNode", manifest: FileManifest, expected: Sequence[Fingerprint]
    ) -> list[int]:
        return [fp.value for fp in expected]

    def encode(self, node: "MinerNode", manifest: FileManifest, chunks: ChunkSet) -> ChunkSet:
        return chunks

    def store(
        self, node: "MinerNode", holding: "SectorHolding", hosted: "HostedChunk", payload: bytes
    ) -> None:
        holding.write(hosted.offset, payload)

    def serve_chunk(self, node: "MinerNode", hosted: "HostedChunk", payload: bytes) -> bytes | None:
        return payload

    def intercept_retrieval(self, node: "MinerNode", request: RetrieveRequest) -> bool:
        """True when the request was handled (or swallowed) by the behaviour."""
        return False

    def on_commit(self, node: "MinerNode", block: Block) -> None:
        pass


@dataclass
class SectorHolding:
    """Local contents of one sector, plus the trees behind committed roots."""

    sector_id: int
    tree: SectorTree
    trees: dict[bytes, SectorTree] = field(default_factory=dict)
    altered: dict[int, bytes] = field(default_factory=dict)
    pos_epoch_sent: int = 0
    pos_sent_at: int = -1
    update_seq_sent: int = 0
    update_sent_at: int = -1
    update_root_sent: bytes = b""
    update_reason: str = "store"

    def __post_init__(self) -> None:
        self.trees.setdefault(self.tree.root, self.tree)

    def write(self, offset: int, data: bytes) -> None:
        self.tree = update_tree(self.tree, offset, data)
        self.trees[self.tree.root] = self.tree

    def replica(self, root: bytes) -> SectorReplica | None:
        tree = self.trees.get(root)
        if tree is None:
            return None
        return SectorReplica(self.sector_id, tree, dict(self.altered))

    def prune(self, keep: set[bytes]) -> None:
        keep = keep | {self.tree.root, self.update_root_sent}
        self.trees = {root: tree for root, tree in self.trees.items() if root in keep}


@dataclass
class HostedChunk:
    file_id: bytes
    index: int
    sector_id: int
    offset: int
    size: int
    expected: int
    partials: dict[int, PartialSignature] = field(default_factory=dict)
    certificate: AggregateSignature | None = None
    pending: list[ChunkTransfer] = field(default_factory=list)
    stored: bool = False


@dataclass
class ServeSession:
    """Retrieval-miner side of a get: verified chunks collected so far."""

    manifest: FileManifest
    client: int
    session: int
    collected: dict[int, bytes] = field(default_factory=dict)
    done: bool = False
    timer: Event | None = None


class MinerNode:
    def __init__(
        self,
        node_id: int,
        network: Network,
        state: LedgerState,
        config: NodeConfig,
        holdings: dict[int, SectorTree] | None = None,
        store: Any = None,
    ) -> None:
        self.node_id = node_id
        self.network = network
        self.state = state
        self.config = config
        self.pp = state.config.pp
        self.key = signing_key(self.pp, node_id)
        self.behaviour: Behaviour = Behaviour()
        self.store = store
        self.peers: list[int] = []
        self.holdings = {
            sid: SectorHolding(sid, tree) for sid, tree in (holdings or {}).items()
        }
        self.chain: list[Block] = []
        self.digests: dict[int, bytes] = {}
        if config.track_digests:
            self.digests[state.height] = state.digest()
        self.mempool: dict[bytes, tuple[Transaction, int]] = {}
        self.hosted: dict[tuple[bytes, int], HostedChunk] = {}
        self.rejected_chunks = 0
        self.faults_submitted = 0
        self._own: set[bytes] = set()
        self._committed_ids: set[bytes] = set()
        self._accused: set[tuple[EvidenceKind, int, int]] = set()
        self._early: dict[bytes, tuple[int, list[tuple[int, Any]]]] = {}
        self._uploads: dict[bytes, tuple[FileUpload, int]] = {}
        self._serving: dict[int, ServeSession] = {}
        self._serve_seq = 0
        self._timers: list[Event] = []
        self._sync_seen = 0
        self.core = SwBftCore(
            node_id, self.key, self._propose, self._block_valid, config.delta_ms
        )
        self._handlers = {
            TxSubmit: self._on_tx,
            Proposal: self._on_consensus,
            Vote: self._on_consensus,
            FileUpload: self._on_upload,
            PartialTransfer: self._on_partials,
            ChunkTransfer: self._on_chunk,
            ChunkRequest: self._on_chunk_request,
            ChunkResponse: self._on_chunk_response,
            RetrieveRequest: self._on_retrieve,
            SyncRequest: self._on_sync_request,
            SyncResponse: self._on_sync_response,
        }
        network.register(node_id, self.receive)

    def set_behaviour(self, behaviour: Behaviour) -> None:
        self.behaviour = behaviour
        behaviour.attach(self)

    @property
    def byzantine(self) -> bool:
        return self.behaviour.byzantine

    def start(self) -> None:
        self._emit(self.core.start_height(self.state.height + 1, self.state.keyring()))

    # ------------------------------------------------------------------ wire

    def receive(self, sender: int, payload: bytes) -> None:
        try:
            message = unpack(payload)
        except ShapeError as exc:
            logger.warning("node=%s undecodable frame from %s: %s", self.node_id, sender, exc)
            return
        handler = self._handlers.get(type(message))
        if handler is None:
            logger.debug("node=%s no handler for %s", self.node_id, type(message).__name__)
            return
        handler(sender, message)

    def _send(self, receiver: int, message: Any) -> None:
        self.network.send(self.node_id, receiver, pack(message))

    def _gossip(self, message: Any) -> None:
        frame = pack(message)
        for peer in self.peers:
            if peer != self.node_id:
                self.network.send(self.node_id, peer, frame)

    # ------------------------------------------------------------- consensus

    def _on_consensus(self, sender: int, message: Proposal | Vote) -> None:
        if message.height > self.core.state.height + 1:
            self._note_ahead(sender, message.height)
        try:
            if isinstance(message, Proposal):
                outputs = self.core.on_proposal(message)
            else:
                outputs = self.core.on_vote(message)
        except (UnknownVoterError, InvalidVoteSignatureError) as exc:
            logger.debug("node=%s ignored vote: %s", self.node_id, exc)
            return
        self._emit(outputs)

    def _emit(self, outputs: list) -> None:
        for output in outputs:
            if isinstance(output, Broadcast):
                self._send_consensus(output.message)
            elif isinstance(output, ScheduleTimeout):
                self._schedule(output)
            elif isinstance(output, Decide):
                self._on_decide(output.block)
            elif isinstance(output, ReportEquivocation):
                evidence: EquivocationEvidence = output.evidence
                self._submit_fault(
                    EvidenceKind.EQUIVOCATION, evidence.first.voter, 0, evidence
                )

    def _schedule(self, timeout: ScheduleTimeout) -> None:
        def fire() -> None:
            self._emit(self.core.on_timeout(timeout.height, timeout.round, timeout.step))

        self._timers.append(self.network.set_timer(self.node_id, timeout.delay_ms, fire))

    def _send_consensus(self, message: Proposal | Vote) -> None:
        if isinstance(message, Vote) and not self.core.ring.knows(self.node_id):
            return
        for outgoing, receivers in self.behaviour.outgoing(self, message):
            frame = pack(outgoing)
            for peer in self.peers if receivers is None else receivers:
                if peer != self.node_id:
                    self.network.send(self.node_id, peer, frame)

    def _propose(self, height: int, round_: int) -> Block:
        candidates = [tx for tx, _ in self.mempool.values()]
        txs = filter_valid(self.state, candidates, self.state.config.max_block_txs)
        return Block(
            height=height,
            parent_hash=self.state.block_hash,
            proposer=self.node_id,
            txs=tuple(txs),
        )

    def _block_valid(self, block: Block) -> bool:
        return (
            block.parent_hash == self.state.block_hash
            and validate_block(self.state, block).ok
        )

    def _on_decide(self, block: Block) -> None:
        if block.height != self.state.height + 1:
            return
        if self._adopt(block):
            self._next_height()

    def _adopt(self, block: Block) -> bool:
        try:
            new_state = apply_block(self.state, block)
        except (InvalidCertificateError, InvalidBlockError) as exc:
            logger.error("node=%s rejected block h=%s: %s", self.node_id, block.height, exc)
            return False
        self.state = new_state
        self.chain.append(block)
        if self.store is not None:
            self.store.append(block, new_state)
        if self.config.track_digests:
            self.digests[new_state.height] = new_state.digest()
        for tx in block.txs:
            self._committed_ids.add(tx.tx_id)
            self.mempool.pop(tx.tx_id, None)
            self._own.discard(tx.tx_id)
        self._after_commit(block)
        return True

    def _next_height(self) -> None:
        for event in self._timers:
            self.network.cancel_timer(event)
        self._timers.clear()
        height = self.state.height + 1

        def begin() -> None:
            if self.state.height + 1 == height:
                self._emit(self.core.start_height(height, self.state.keyring()))

        if self.config.block_interval_ms > 0:
            self._timers.append(
                self.network.set_timer(self.node_id, self.config.block_interval_ms, begin)
            )
        else:
            begin()

    def _after_commit(self, block: Block) -> None:
        self._prune_mempool()
        for tx in block.txs:
            if tx.kind is TxKind.STORE:
                manifest = self.state.manifest(tx.payload.file_id)
                if manifest is not None:
                    self._register_hosted(manifest)
                for host, transfer in self.storage_on_store_tx(tx).items():
                    self._send(host, transfer)
        self._process_early()
        self._cleanup_expired()
        for file_id in list(self._uploads):
            self.encoder_handle(file_id)
        self._expire_uploads()
        self._maintain_sectors()
        self._rebroadcast()
        self.behaviour.on_commit(self, block)

    # ---------------------------------------------------------------- sync

    def _note_ahead(self, sender: int, height: int) -> None:
        if height <= self._sync_seen:
            return
        self._sync_seen = height

        def check() -> None:
            if self.state.height + 1 < height:
                self._send(sender, SyncRequest(self.state.height + 1, self.node_id))

        self.network.set_timer(self.node_id, 2 * self.config.delta_ms, check)

    def _on_sync_request(self, sender: int, request: SyncRequest) -> None:
        start = max(1, request.from_height)
        blocks = tuple(self.chain[start - 1 : start - 1 + SYNC_BATCH])
        if blocks:
            self._send(request.requester, SyncResponse(blocks))

    def _on_sync_response(self, sender: int, response: SyncResponse) -> None:
        adopted = 0
        for block in response.blocks:
            if block.height != self.state.height + 1:
                continue
            if not self._adopt(block):
                break
            adopted += 1
        if adopted:
            logger.info(
                "node=%s caught up to height=%s from node=%s",
                self.node_id,
                self.state.height,
                sender,
            )
            self._next_height()

    # ------------------------------------------------------------- mempool

    def submit(self, tx: Transaction) -> None:
        self._own.add(tx.tx_id)
        self._admit(tx)
        self._gossip(TxSubmit(tx))

    def _on_tx(self, sender: int, message: TxSubmit) -> None:
        self._admit(message.tx)

    def _admit(self, tx: Transaction) -> bool:
        tx_id = tx.tx_id
        if tx_id in self.mempool or tx_id in self._committed_ids:
            return False
        verdict = validate_tx(tx, self.state)
        if not verdict.ok and verdict.reason in _FINAL_REJECTIONS:
            logger.debug(
                "node=%s rejected %s from %s: %s",
                self.node_id,
                tx.kind.name,
                tx.submitter,
                verdict.reason,
            )
            if verdict.reason == "pos-invalid" and not self.byzantine:
                self._submit_fault(
                    EvidenceKind.POS_INVALID, tx.submitter, tx.payload.sector_id, tx
                )
            return False
        self.mempool[tx_id] = (tx, self.state.height)
        return True

    def _prune_mempool(self) -> None:
        height = self.state.height
        for tx_id, (_, added) in list(self.mempool.items()):
            if height - added > self.config.mempool_ttl:
                del self.mempool[tx_id]
                self._own.discard(tx_id)

    def _rebroadcast(self) -> None:
        height = self.state.height
        for tx_id in sorted(self._own):
            entry = self.mempool.get(tx_id)
            if entry is None:
                self._own.discard(tx_id)
                continue
            tx, added = entry
            if height > added and (height - added) % RESEND_AFTER_HEIGHTS == 0:
                self._gossip(TxSubmit(tx))

    def _submit_fault(
        self, kind: EvidenceKind, accused: int, sector_id: int, evidence: Any
    ) -> None:
        key = (kind, accused, sector_id)
        if key in self._accused or accused == self.node_id:
            return
        self._accused.add(key)
        payload = FaultPayload(kind=kind, accused=accused, sector_id=sector_id, evidence=evidence)
        tx = Transaction(TxKind.FAULT, self.node_id, payload).signed(self.key)
        self.faults_submitted += 1
        logger.info(
            "node=%s reports %s against node=%s", self.node_id, kind.name.lower(), accused
        )
        self.submit(tx)

    def _buffer_early(self, file_id: bytes, sender: int, message: Any) -> None:
        if file_id not in self._early and len(self._early) >= self.config.early_files:
            oldest = next(iter(self._early))
            _, dropped = self._early.pop(oldest)
            logger.warning(
                "node=%s early buffer full, dropped %s messages for file=%s",
                self.node_id,
                len(dropped),
                oldest.hex()[:12],
            )
        added, bucket = self._early.setdefault(file_id, (self.state.height, []))
        if len(bucket) < self.config.early_buffer:
            bucket.append((sender, message))

    def _process_early(self) -> None:
        for file_id in list(self._early):
            added, bucket = self._early[file_id]
            if file_id in self.state.files:
                del self._early[file_id]
                for sender, message in bucket:
                    self._handlers[type(message)](sender, message)
            elif self.state.height - added > self.config.mempool_ttl:
                del self._early[file_id]

    # -------------------------------------------------------------- sectors

    def pledge_sector(
        self, sector_id: int, tree: SectorTree, altered: dict[int, bytes] | None = None
    ) -> Transaction:
        """Claim a new sector; the PLEDGE carries the epoch-0 proof."""
        holding = SectorHolding(sector_id, tree, altered=dict(altered or {}))
        self.holdings[sector_id] = holding
        seed = initial_challenge_seed(sector_id, self.state.config.genesis_hash)
        proof = holding.replica(tree.root).respond(0, seed)
        tx = Transaction(
            TxKind.PLEDGE, self.node_id, PledgePayload(sector_id, tree.root, proof)
        ).signed(self.key)
        self.submit(tx)
        return tx

    def _maintain_sectors(self) -> None:
        for sector_id, holding in self.holdings.items():
            record = self.state.sectors.get(sector_id)
            if record is None or not record.active or record.owner != self.node_id:
                continue
            self._maybe_update(sector_id)
            self._maybe_pos(sector_id)
            holding.prune({root for _, root in record.root_history})

    def _maybe_update(self, sector_id: int) -> None:
        holding = self.holdings[sector_id]
        record = self.state.sectors.get(sector_id)
        if record is None or not record.active or holding.tree.root == record.root:
            return
        height = self.state.height
        waiting = holding.update_seq_sent > record.update_seq
        if waiting and height - holding.update_sent_at < RESEND_AFTER_HEIGHTS:
            return
        sequence = record.update_seq + 1
        payload = UpdatePayload(sector_id, holding.tree.root, sequence, holding.update_reason)
        holding.update_seq_sent = sequence
        holding.update_sent_at = height
        holding.update_root_sent = holding.tree.root
        self.submit(Transaction(TxKind.UPDATE, self.node_id, payload).signed(self.key))

    def _maybe_pos(self, sector_id: int) -> None:
        holding = self.holdings[sector_id]
        record = self.state.sectors[sector_id]
        height = self.state.height
        due = height - record.last_pos_height >= self.config.pos_interval
        waiting = (
            holding.pos_epoch_sent > record.pos_epoch
            and height - holding.pos_sent_at < RESEND_AFTER_HEIGHTS
        )
        if not due or waiting:
            return
        replica = holding.replica(record.root)
        if replica is None:
            logger.warning(
                "node=%s has no tree for committed root of sector=%s", self.node_id, sector_id
            )
            return
        proof = replica.respond(record.pos_epoch + 1, record.challenge_seed)
        holding.pos_epoch_sent = record.pos_epoch + 1
        holding.pos_sent_at = height
        payload = PosPayload(sector_id=sector_id, root_height=height, proof=proof)
        self.submit(Transaction(TxKind.POS, self.node_id, payload).signed(self.key))

    def _cleanup_expired(self) -> None:
        for key, hosted in list(self.hosted.items()):
            if hosted.file_id in self.state.files:
                continue
            del self.hosted[key]
            holding = self.holdings.get(hosted.sector_id)
            if hosted.stored and holding is not None:
                holding.write(hosted.offset, bytes(hosted.size))
                holding.update_reason = "cleanup"
                logger.debug(
                    "node=%s cleared file=%s chunk=%s",
                    self.node_id,
                    short_hex(hosted.file_id),
                    hosted.index,
                )

    # -------------------------------------------------------- storage miner

    def storage_on_store_tx(self, tx: Transaction) -> dict[int, PartialTransfer]:
        """Partials over the encoded fingerprints, grouped by receiving host."""
        body = tx.payload
        if compute_file_id(body.fingerprints) != body.file_id:
            logger.warning(
                "node=%s ignores STORE with mismatched id from %s", self.node_id, tx.submitter
            )
            return {}
        manifest = self.state.manifest(body.file_id)
        if manifest is None or manifest.fingerprints != tuple(body.fingerprints):
            return {}
        ring = self.state.keyring(manifest.key_height)
        if not ring.knows(self.node_id):
            return {}
        expected = expected_fingerprints(manifest, self.state.config.fingerprint_params)
        values = self.behaviour.partial_values(self, manifest, expected)
        grouped: dict[int, list[tuple[int, int, PartialSignature]]] = {}
        for index, (sector_id, value) in enumerate(zip(manifest.placement, values), start=1):
            host = self.state.sectors[sector_id].owner
            partial = wts_psign(chunk_message(body.file_id, index, u64(value)), self.key)
            grouped.setdefault(host, []).append((index, value, partial))
        return {
            host: PartialTransfer(body.file_id, tuple(entries))
            for host, entries in sorted(grouped.items())
        }

    # ----------------------------------------------------------------- host

    def _register_hosted(self, manifest: FileManifest) -> None:
        expected = expected_fingerprints(manifest, self.state.config.fingerprint_params)
        for index, sector_id in enumerate(manifest.placement, start=1):
            if sector_id not in self.holdings:
                continue
            if self.state.sectors[sector_id].owner != self.node_id:
                continue
            self.hosted.setdefault(
                (manifest.file_id, index),
                HostedChunk(
                    file_id=manifest.file_id,
                    index=index,
                    sector_id=sector_id,
                    offset=manifest.offsets[index - 1],
                    size=manifest.chunk_size,
                    expected=expected[index - 1].value,
                ),
            )

    def _certificate_ring(self, manifest: FileManifest) -> tuple[KeyRing, int]:
        ring = self.state.keyring(manifest.key_height)
        return ring, compute_f(ring.total_weight) + 1

    def _on_partials(self, sender: int, message: PartialTransfer) -> None:
        manifest = self.state.manifest(message.file_id)
        if manifest is None:
            self._buffer_early(message.file_id, sender, message)
            return
        ring, threshold = self._certificate_ring(manifest)
        for index, value, partial in message.partials:
            hosted = self.hosted.get((message.file_id, index))
            if hosted is None or hosted.certificate is not None:
                continue
            self.storage_accumulate(hosted, value, partial, ring, threshold)

    def storage_accumulate(
        self,
        hosted: HostedChunk,
        value: int,
        partial: PartialSignature,
        ring: KeyRing,
        threshold: int,
    ) -> AggregateSignature | None:
        digest = hash_bytes(chunk_message(hosted.file_id, hosted.index, u64(value)))
        if not partial_valid(partial, ring, digest):
            logger.warning(
                "node=%s invalid partial from %s for chunk=%s",
                self.node_id,
                partial.signer,
                hosted.index,
            )
            return None
        if value != hosted.expected:
            logger.warning(
                "node=%s partial from %s signs a wrong fingerprint for chunk=%s",
                self.node_id,
                partial.signer,
                hosted.index,
            )
            evidence = PartialEvidence(hosted.file_id, hosted.index, value, partial)
            self._submit_fault(EvidenceKind.BAD_PARTIAL, partial.signer, 0, evidence)
            return None
        hosted.partials.setdefault(partial.signer, partial)
        weight = sum(ring.weight_of(signer) for signer in hosted.partials)
        if weight < threshold:
            return None
        hosted.certificate = wts_aggregate(list(hosted.partials.values()), ring)
        pending, hosted.pending = hosted.pending, []
        for transfer in pending:
            self.storage_on_chunk(hosted, transfer)
        return hosted.certificate

    def _on_chunk(self, sender: int, transfer: ChunkTransfer) -> None:
        chunk = transfer.chunk
        if not signature_valid(self.pp, chunk.encoder, chunk.signing_bytes(), chunk.signature):
            logger.warning("node=%s unsigned chunk from %s", self.node_id, sender)
            return
        if self.state.manifest(chunk.file_id) is None:
            self._buffer_early(chunk.file_id, sender, transfer)
            return
        hosted = self.hosted.get((chunk.file_id, chunk.index))
        if hosted is None:
            return
        if hosted.certificate is None:
            if len(hosted.pending) < self.config.chunk_buffer:
                hosted.pending.append(transfer)
            return
        self.storage_on_chunk(hosted, transfer)

    def chunk_certified(
        self,
        manifest: FileManifest,
        index: int,
        payload: bytes,
        certificate: AggregateSignature | None,
    ) -> bool:
        if not isinstance(certificate, AggregateSignature):
            return False
        if len(payload) != manifest.chunk_size:
            return False
        ring, threshold = self._certificate_ring(manifest)
        fingerprint = hf_compute(payload, self.state.config.fingerprint_params)
        message = chunk_message(manifest.file_id, index, u64(fingerprint.value))
        return wts_verify(message, certificate, ring, threshold)

    def storage_on_chunk(self, hosted: HostedChunk, transfer: ChunkTransfer) -> bool:
        manifest = self.state.manifest(hosted.file_id)
        if manifest is None:
            return False
        if hosted.stored:
            self._ack(hosted, transfer)
            return True
        chunk = transfer.chunk
        if not self.chunk_certified(manifest, hosted.index, chunk.payload, hosted.certificate):
            self.rejected_chunks += 1
            logger.warning(
                "node=%s rejected chunk=%s of file=%s from encoder=%s",
                self.node_id,
                hosted.index,
                short_hex(hosted.file_id),
                chunk.encoder,
            )
            nack = ChunkNack(hosted.file_id, hosted.index, self.node_id, transfer.session, chunk)
            self._send(transfer.client, nack)
            self._submit_fault(EvidenceKind.BAD_CHUNK, chunk.encoder, 0, chunk)
            return False
        holding = self.holdings[hosted.sector_id]
        self.behaviour.store(self, holding, hosted, chunk.payload)
        holding.update_reason = "store"
        hosted.stored = True
        self._ack(hosted, transfer)
        self._maybe_update(hosted.sector_id)
        return True

    def _ack(self, hosted: HostedChunk, transfer: ChunkTransfer) -> None:
        message = ack_message(hosted.file_id, hosted.index, hosted.sector_id, self.node_id)
        ack = StorageAck(
            file_id=hosted.file_id,
            index=hosted.index,
            sector_id=hosted.sector_id,
            host=self.node_id,
            session=transfer.session,
            signature=self.key.sign(message),
        )
        self._send(transfer.client, ack)

    def stored_chunk(self, file_id: bytes, index: int) -> bytes | None:
        hosted = self.hosted.get((file_id, index))
        if hosted is None or not hosted.stored:
            return None
        return self.holdings[hosted.sector_id].tree.read(hosted.offset, hosted.size)

    def _on_chunk_request(self, sender: int, request: ChunkRequest) -> None:
        for index in request.indices:
            payload = self.stored_chunk(request.file_id, index)
            if payload is None:
                continue
            hosted = self.hosted[(request.file_id, index)]
            served = self.behaviour.serve_chunk(self, hosted, payload)
            if served is None:
                continue
            response = ChunkResponse(
                request.file_id, index, served, hosted.certificate, request.session
            )
            self._send(request.requester, response)

    # -------------------------------------------------------------- encoder

    def _on_upload(self, sender: int, upload: FileUpload) -> None:
        self._uploads[upload.file_id] = (upload, self.state.height)
        self.encoder_handle(upload.file_id)

    def encoder_handle(self, file_id: bytes) -> int:
        """Encode a pending upload once its STORE is on chain; chunks sent."""
        entry = self._uploads.get(file_id)
        manifest = self.state.manifest(file_id)
        if entry is None or manifest is None:
            return 0
        upload, _ = entry
        del self._uploads[file_id]
        if len(upload.data) != manifest.file_length:
            self._nack_upload(upload, "bad-size")
            return 0
        padded = upload.data + bytes(manifest.padding)
        size = manifest.chunk_size
        data = [padded[i * size : (i + 1) * size] for i in range(manifest.k)]
        params = self.state.config.fingerprint_params
        if compute_file_id([hf_compute(chunk, params).value for chunk in data]) != file_id:
            self._nack_upload(upload, "id-mismatch")
            return 0

        chunks = rs_encode(data, build_generator(manifest.k, manifest.f))
        chunks = self.behaviour.encode(self, manifest, chunks)
        for index, payload in chunks.chunks:
            host = self.state.sectors[manifest.sector_of(index)].owner
            signed = SignedChunk(file_id, index, payload, self.node_id).signed(self.key)
            self._send(host, ChunkTransfer(signed, upload.client, upload.session))
        logger.debug(
            "node=%s encoded file=%s into %s chunks",
            self.node_id,
            short_hex(file_id),
            len(chunks),
        )
        return len(chunks)

    def _nack_upload(self, upload: FileUpload, reason: str) -> None:
        logger.warning(
            "node=%s refuses file=%s: %s", self.node_id, short_hex(upload.file_id), reason
        )
        self._send(upload.client, EncoderNack(upload.file_id, self.node_id, upload.session, reason))

    def _expire_uploads(self) -> None:
        for file_id, (upload, added) in list(self._uploads.items()):
            if self.state.height - added > self.config.mempool_ttl:
                del self._uploads[file_id]
                self._nack_upload(upload, "not-committed")

    # ------------------------------------------------------------ retrieval

    def _on_retrieve(self, sender: int, request: RetrieveRequest) -> None:
        self.retrieval_serve(request)

    def retrieval_serve(self, request: RetrieveRequest) -> ServeSession | None:
        manifest = self.state.manifest(request.file_id)
        if manifest is None:
            response = RetrieveResponse(request.file_id, b"", request.session, False, "not-found")
            self._send(request.client, response)
            return None
        if self.behaviour.intercept_retrieval(self, request):
            return None

        self._serve_seq += 1
        serve_id = self._serve_seq
        session = ServeSession(manifest, request.client, request.session)
        self._serving[serve_id] = session
        timeout = retrieval_timeout_ms(
            self.network.policy.delta_ms,
            self.network.policy.bandwidth_bytes_per_ms,
            manifest.padded_length + manifest.stored_bytes,
        )
        session.timer = self.network.set_timer(
            self.node_id, timeout, lambda: self._serving.pop(serve_id, None)
        )
        by_host: dict[int, list[int]] = {}
        for index, sector_id in enumerate(manifest.placement, start=1):
            by_host.setdefault(self.state.sectors[sector_id].owner, []).append(index)
        for host, indices in sorted(by_host.items()):
            self._send(host, ChunkRequest(manifest.file_id, tuple(indices), self.node_id, serve_id))
        return session

    def _on_chunk_response(self, sender: int, response: ChunkResponse) -> None:
        session = self._serving.get(response.session)
        if session is None or session.done:
            return
        manifest = session.manifest
        if response.file_id != manifest.file_id or response.index in session.collected:
            return
        if not self.chunk_certified(
            manifest, response.index, response.payload, response.certificate
        ):
            self.rejected_chunks += 1
            logger.warning(
                "node=%s rejected served chunk=%s from node=%s",
                self.node_id,
                response.index,
                sender,
            )
            return
        session.collected[response.index] = response.payload
        if len(session.collected) >= manifest.k:
            self._finish_serve(response.session, session)

    def _finish_serve(self, serve_id: int, session: ServeSession) -> None:
        manifest = session.manifest
        session.done = True
        self._serving.pop(serve_id, None)
        if session.timer is not None:
            self.network.cancel_timer(session.timer)
        chosen = dict(sorted(session.collected.items())[: manifest.k])
        try:
            data_chunks = rs_decode(
                ChunkSet.from_mapping(chosen), build_generator(manifest.k, manifest.f), manifest.k
            )
        except CodingError as exc:
            logger.error("node=%s decode failed: %s", self.node_id, exc)
            response = RetrieveResponse(manifest.file_id, b"", session.session, False, "decode")
        else:
            data = join_file(data_chunks, manifest.file_length)
            response = RetrieveResponse(manifest.file_id, data, session.session, True)
        self._send(session.client, response)
