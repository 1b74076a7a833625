"""Byzantine strategies for simulated miners.

A strategy is a ``Behaviour`` whose hooks replace the honest handlers it
attacks; the rest of the node stays honest. Corruption is static: the
coalition is chosen once per scenario, and every random choice a strategy
makes comes from a generator seeded by the scenario seed and the member id.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bftdsn.core.exceptions import CodingError, ScenarioError
from bftdsn.core.fingerprint import Fingerprint
from bftdsn.core.galois_rs import ChunkSet, build_generator, rs_decode, rs_encode
from bftdsn.core.merkle_pos import SectorReplica, build_tree, random_sector_data
from bftdsn.core.models import Block, FileManifest, Vote, vote_message
from bftdsn.core.swbft import Proposal
from bftdsn.core.utils import hash_bytes, make_rng, u64
from bftdsn.core.wts import wts_psign
from bftdsn.protocol.messages import RetrieveRequest, RetrieveResponse
from bftdsn.protocol.miner import Behaviour, HostedChunk, MinerNode, SectorHolding

logger = logging.getLogger("bftdsn.sim.adversary")

STRATEGIES = (
    "none",
    "tamper-chunk",
    "drop-chunk",
    "bad-encoder",
    "bad-retrieval",
    "sybil-pledge",
    "generation-attack",
    "equivocate",
    "combined",
    "fuzz",
)
COMBINED_ROTATION = ("tamper-chunk", "drop-chunk", "bad-encoder", "bad-retrieval", "equivocate")
SYBIL_SECTOR_BASE = 1_000_000


@dataclass(frozen=True)
class AdversaryConfig:
    strategy: str = "none"
    byzantine_fraction: float = 0.0
    seed: int = 0
    sybil_sectors: int = 1
    sybil_stored_fraction: float = 0.0
    retrieval_mode: str = "mixed"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"неизвестная стратегия '{self.strategy}'")
        if not 0.0 <= self.byzantine_fraction < 1.0:
            raise ScenarioError("доля византийских секторов должна быть в [0, 1)")
        if not 0.0 <= self.sybil_stored_fraction <= 1.0:
            raise ScenarioError("sybil_stored_fraction должна быть в [0, 1]")
        if self.retrieval_mode not in ("garbage", "stall", "mixed"):
            raise ScenarioError(f"неизвестный режим '{self.retrieval_mode}'")

    def budget(self, n: int) -> int:
        """Most sectors the coalition may own."""
        return math.floor(self.byzantine_fraction * n)


def select_byzantine(weights: dict[int, int], config: AdversaryConfig) -> list[int]:
    """Miners drawn in seeded random order while their sectors fit the budget."""
    if config.strategy == "none":
        return []
    budget = config.budget(sum(weights.values()))
    order = make_rng(config.seed, "byzantine").permutation(sorted(weights))
    chosen, total = [], 0
    for miner in (int(m) for m in order):
        weight = weights[miner]
        if weight > 0 and total + weight <= budget:
            chosen.append(miner)
            total += weight
    return sorted(chosen)


@dataclass
class Coalition:
    """State the corrupted miners share."""

    members: set[int] = field(default_factory=set)
    kept: dict[bytes, dict[int, bytes]] = field(default_factory=dict)
    sybil_sectors: list[int] = field(default_factory=list)
    regeneration_failures: int = 0
    tampered: int = 0
    dropped: int = 0
    equivocations: int = 0


class _Strategy(Behaviour):
    byzantine = True

    def __init__(self, config: AdversaryConfig, coalition: Coalition) -> None:
        self.config = config
        self.coalition = coalition
        self.rng: np.random.Generator | None = None

    def attach(self, node: MinerNode) -> None:
        self.coalition.members.add(node.node_id)
        self.rng = make_rng(self.config.seed, "adversary", self.name, node.node_id)


def _flip(payload: bytes, rng: np.random.Generator) -> bytes:
    if not payload:
        return payload
    data = bytearray(payload)
    data[int(rng.integers(len(data)))] ^= 0xFF
    return bytes(data)


class TamperChunk(_Strategy):
    name = "tamper-chunk"

    def serve_chunk(self, node: MinerNode, hosted: HostedChunk, payload: bytes) -> bytes | None:
        self.coalition.tampered += 1
        return _flip(payload, self.rng)


class DropChunk(_Strategy):
    """Acknowledges chunks without storing them and never serves anything."""

    name = "drop-chunk"

    def store(
        self, node: MinerNode, holding: SectorHolding, hosted: HostedChunk, payload: bytes
    ) -> None:
        self.coalition.dropped += 1

    def serve_chunk(self, node: MinerNode, hosted: HostedChunk, payload: bytes) -> bytes | None:
        return None

    def intercept_retrieval(self, node: MinerNode, request: RetrieveRequest) -> bool:
        return True


class BadEncoder(_Strategy):
    """Emits wrong parity and signs wrong parity fingerprints as a storage miner."""

    name = "bad-encoder"

    def encode(self, node: MinerNode, manifest: FileManifest, chunks: ChunkSet) -> ChunkSet:
        bad = [
            (index, _flip(payload, self.rng) if index > manifest.k else payload)
            for index, payload in chunks.chunks
        ]
        return ChunkSet(tuple(bad))

    def partial_values(
        self, node: MinerNode, manifest: FileManifest, expected: Sequence[Fingerprint]
    ) -> list[int]:
        return [
            fp.value ^ 1 if index > manifest.k else fp.value
            for index, fp in enumerate(expected, start=1)
        ]


class BadRetrieval(_Strategy):
    name = "bad-retrieval"

    def intercept_retrieval(self, node: MinerNode, request: RetrieveRequest) -> bool:
        mode = self.config.retrieval_mode
        if mode == "mixed":
            mode = "stall" if self.rng.random() < 0.5 else "garbage"
        if mode == "stall":
            return True
        manifest = node.state.manifest(request.file_id)
        garbage = self.rng.bytes(manifest.file_length)
        node._send(
            request.client,
            RetrieveResponse(request.file_id, garbage, request.session, True),
        )
        return True


class SybilPledge(_Strategy):
    """Pledges extra sectors while holding only a fraction of their data."""

    name = "sybil-pledge"

    def __init__(self, config: AdversaryConfig, coalition: Coalition) -> None:
        super().__init__(config, coalition)
        self._pledged = False

    def on_commit(self, node: MinerNode, block: Block) -> None:
        if self._pledged:
            return
        self._pledged = True
        ledger = node.state.config
        for offset in range(self.config.sybil_sectors):
            sector_id = SYBIL_SECTOR_BASE + node.node_id * 1000 + offset
            data = random_sector_data(self.config.seed, sector_id, ledger.sector_size)
            tree = build_tree(data, ledger.fragment_size)
            replica = SectorReplica(sector_id, tree)
            replica.keep_fraction(self.config.sybil_stored_fraction, self.rng)
            node.pledge_sector(sector_id, tree, replica.altered)
            self.coalition.sybil_sectors.append(sector_id)
            logger.info("node=%s sybil pledge sector=%s", node.node_id, sector_id)


class GenerationAttack(_Strategy):
    """Keeps fewer than K chunks per file and regenerates the rest on demand."""

    name = "generation-attack"

    def store(
        self, node: MinerNode, holding: SectorHolding, hosted: HostedChunk, payload: bytes
    ) -> None:
        holding.write(hosted.offset, payload)
        manifest = node.state.manifest(hosted.file_id)
        kept = self.coalition.kept.setdefault(hosted.file_id, {})
        if manifest is not None and len(kept) < manifest.k - 1:
            kept[hosted.index] = payload
        size = holding.tree.fragment_size
        first = hosted.offset // size
        last = math.ceil((hosted.offset + hosted.size) / size)
        for index in range(first, last):
            holding.altered[index] = bytes(size)

    def serve_chunk(self, node: MinerNode, hosted: HostedChunk, payload: bytes) -> bytes | None:
        kept = self.coalition.kept.get(hosted.file_id, {})
        if hosted.index in kept:
            return kept[hosted.index]
        manifest = node.state.manifest(hosted.file_id)
        if manifest is None:
            return None
        gen = build_generator(manifest.k, manifest.f)
        try:
            data = rs_decode(ChunkSet.from_mapping(dict(kept)), gen, manifest.k)
        except CodingError:
            self.coalition.regeneration_failures += 1
            return None
        return rs_encode(data, gen).payload(hosted.index)


class Equivocate(_Strategy):
    """Sends one vote to half the peers and a conflicting one to the rest."""

    name = "equivocate"

    def outgoing(
        self, node: MinerNode, message: Proposal | Vote
    ) -> list[tuple[Proposal | Vote, Sequence[int] | None]]:
        if not isinstance(message, Vote):
            return [(message, None)]
        if message.block_hash is None:
            other = hash_bytes(b"equivocate", u64(message.height), u64(message.round))
        else:
            other = None
        twin = Vote(
            height=message.height,
            round=message.round,
            step=message.step,
            block_hash=other,
            voter=message.voter,
            signature=wts_psign(
                vote_message(message.height, message.round, message.step, other), node.key
            ),
        )
        peers = [peer for peer in node.peers if peer != node.node_id]
        half = len(peers) // 2
        self.coalition.equivocations += 1
        return [(message, peers[:half]), (twin, peers[half:])]


class Fuzz(_Strategy):
    """Per invocation: honest, drop or tamper."""

    name = "fuzz"

    def _mode(self) -> str:
        return ("honest", "drop", "tamper")[int(self.rng.integers(3))]

    def serve_chunk(self, node: MinerNode, hosted: HostedChunk, payload: bytes) -> bytes | None:
        mode = self._mode()
        if mode == "drop":
            return None
        if mode == "tamper":
            self.coalition.tampered += 1
            return _flip(payload, self.rng)
        return payload

    def intercept_retrieval(self, node: MinerNode, request: RetrieveRequest) -> bool:
        mode = self._mode()
        if mode == "honest":
            return False
        if mode == "tamper":
            manifest = node.state.manifest(request.file_id)
            garbage = self.rng.bytes(manifest.file_length)
            node._send(
                request.client,
                RetrieveResponse(request.file_id, garbage, request.session, True),
            )
        return True

    def outgoing(
        self, node: MinerNode, message: Proposal | Vote
    ) -> list[tuple[Proposal | Vote, Sequence[int] | None]]:
        if isinstance(message, Vote) and self._mode() == "drop":
            return []
        return [(message, None)]


_BY_NAME: dict[str, type[_Strategy]] = {
    cls.name: cls
    for cls in (
        TamperChunk,
        DropChunk,
        BadEncoder,
        BadRetrieval,
        SybilPledge,
        GenerationAttack,
        Equivocate,
        Fuzz,
    )
}


def strategy_for(
    config: AdversaryConfig, coalition: Coalition, position: int = 0
) -> Behaviour:
    name = config.strategy
    if name == "none":
        return Behaviour()
    if name == "combined":
        name = COMBINED_ROTATION[position % len(COMBINED_ROTATION)]
    return _BY_NAME[name](config, coalition)


def apply_strategy(
    node: MinerNode, config: AdversaryConfig, coalition: Coalition, position: int = 0
) -> MinerNode:
    behaviour = strategy_for(config, coalition, position)
    node.set_behaviour(behaviour)
    if behaviour.byzantine:
        logger.info("node=%s corrupted with %s", node.node_id, behaviour.name)
    return node
