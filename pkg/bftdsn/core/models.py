from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any

from bftdsn.core.codec import encode_value, pack, wire_type
from bftdsn.core.merkle_pos import PosProof
from bftdsn.core.utils import hash_bytes, u32, u64
from bftdsn.core.wts import MessageTag, PartialSignature, SigningKey, tagged_message


@wire_type(10)
class TxKind(IntEnum):
    STORE = 1
    PLEDGE = 2
    POS = 3
    FAULT = 4
    RETRIEVE_REPORT = 5
    UPDATE = 6


@wire_type(11)
class EvidenceKind(IntEnum):
    POS_INVALID = 1
    EQUIVOCATION = 2
    BAD_CHUNK = 3
    BAD_PARTIAL = 4


@wire_type(12)
class VoteStep(IntEnum):
    PREVOTE = 1
    PRECOMMIT = 2


def vote_message(height: int, round_: int, step: VoteStep, block_hash: bytes | None) -> bytes:
    return tagged_message(
        MessageTag.VOTE,
        u64(height),
        u32(round_),
        bytes([int(step)]),
        block_hash or b"",
    )


@wire_type(13)
@dataclass(frozen=True)
class Vote:
    height: int
    round: int
    step: VoteStep
    block_hash: bytes | None
    voter: int
    signature: PartialSignature

    @property
    def message(self) -> bytes:
        return vote_message(self.height, self.round, self.step, self.block_hash)

    def conflicts_with(self, other: "Vote") -> bool:
        return (
            self.voter == other.voter
            and self.height == other.height
            and self.round == other.round
            and self.step == other.step
            and self.block_hash != other.block_hash
        )


@wire_type(14)
@dataclass(frozen=True)
class StorePayload:
    file_id: bytes
    fingerprints: tuple[int, ...]
    chunk_size: int
    file_length: int
    n: int


@wire_type(15)
@dataclass(frozen=True)
class PledgePayload:
    sector_id: int
    root: bytes
    proof: PosProof


@wire_type(16)
@dataclass(frozen=True)
class PosPayload:
    sector_id: int
    root_height: int
    proof: PosProof


@wire_type(17)
@dataclass(frozen=True)
class FaultPayload:
    kind: EvidenceKind
    accused: int
    sector_id: int
    evidence: Any


@wire_type(18)
@dataclass(frozen=True)
class RetrieveReportPayload:
    file_id: bytes
    retrieval_miner: int
    session: int
    reason: str


@wire_type(19)
@dataclass(frozen=True)
class UpdatePayload:
    sector_id: int
    root: bytes
    sequence: int
    reason: str = "store"


@wire_type(20)
@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    submitter: int
    payload: Any
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return tagged_message(
            MessageTag.TRANSACTION,
            encode_value((self.kind, self.submitter, self.payload)),
        )

    @property
    def tx_id(self) -> bytes:
        return hash_bytes(pack(self))

    def signed(self, key: SigningKey) -> "Transaction":
        return replace(self, signature=key.sign(self.signing_bytes()))


@wire_type(21)
@dataclass(frozen=True)
class Block:
    height: int
    parent_hash: bytes
    proposer: int
    txs: tuple[Transaction, ...] = ()
    commit_round: int = 0
    certificate: Any = None

    @property
    def block_hash(self) -> bytes:
        header = (self.height, self.parent_hash, self.proposer, tuple(tx.tx_id for tx in self.txs))
        return hash_bytes(encode_value(header))

    def with_certificate(self, round_: int, certificate: Any) -> "Block":
        return replace(self, commit_round=round_, certificate=certificate)


@wire_type(22)
@dataclass(frozen=True)
class EquivocationEvidence:
    first: Vote
    second: Vote


@wire_type(23)
@dataclass(frozen=True)
class SignedChunk:
    """A chunk as sent by its encoder, signed so it can serve as evidence."""

    file_id: bytes
    index: int
    payload: bytes
    encoder: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return tagged_message(
            MessageTag.CHUNK_TRANSFER,
            self.file_id,
            u32(self.index),
            u64(self.encoder),
            hash_bytes(self.payload),
        )

    def signed(self, key: SigningKey) -> "SignedChunk":
        return replace(self, signature=key.sign(self.signing_bytes()))


@wire_type(24)
@dataclass(frozen=True)
class PartialEvidence:
    file_id: bytes
    index: int
    fingerprint: int
    partial: PartialSignature


@wire_type(30)
@dataclass
class SectorRecord:
    sector_id: int
    owner: int
    root: bytes
    pledged_height: int
    challenge_seed: bytes
    root_history: list = field(default_factory=list)
    last_pos_height: int = 0
    pos_epoch: int = 0
    update_seq: int = 0
    next_offset: int = 0
    active: bool = True
    faulted_height: int = -1

    def __post_init__(self) -> None:
        self.root_history = [tuple(entry) for entry in self.root_history]
        if not self.root_history:
            self.root_history = [(self.pledged_height, self.root)]

    def root_at(self, height: int) -> bytes | None:
        heights = [entry[0] for entry in self.root_history]
        position = bisect.bisect_right(heights, height) - 1
        if position < 0:
            return None
        return self.root_history[position][1]

    def set_root(self, height: int, root: bytes, keep_from: int) -> None:
        self.root = root
        if self.root_history and self.root_history[-1][0] == height:
            self.root_history[-1] = (height, root)
        else:
            self.root_history.append((height, root))
        # the entry in force at keep_from must survive
        while len(self.root_history) > 1 and self.root_history[1][0] <= keep_from:
            self.root_history.pop(0)

    def copy(self) -> "SectorRecord":
        return replace(self, root_history=list(self.root_history))


@wire_type(31)
@dataclass(frozen=True)
class FileManifest:
    file_id: bytes
    fingerprints: tuple[int, ...]
    chunk_size: int
    file_length: int
    n: int
    f: int
    placement: tuple[int, ...]
    offsets: tuple[int, ...]
    store_height: int
    key_height: int
    expiry_height: int = 0
    submitter: int = 0

    @property
    def k(self) -> int:
        return self.n - self.f

    @property
    def padded_length(self) -> int:
        return self.k * self.chunk_size

    @property
    def padding(self) -> int:
        return self.padded_length - self.file_length

    @property
    def stored_bytes(self) -> int:
        return self.n * self.chunk_size

    def sector_of(self, index: int) -> int:
        return self.placement[index - 1]

    def expires_at(self, height: int) -> bool:
        return 0 < self.expiry_height <= height


@wire_type(32)
@dataclass
class WeightTable:
    """Height-indexed miner -> sector count; an entry holds until the next one."""

    entries: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entries = [(int(h), dict(w)) for h, w in self.entries]

    def record(self, height: int, weights: dict[int, int]) -> None:
        snapshot = {miner: w for miner, w in weights.items() if w > 0}
        if self.entries and self.entries[-1][1] == snapshot:
            return
        if self.entries and self.entries[-1][0] == height:
            self.entries[-1] = (height, snapshot)
        else:
            self.entries.append((height, snapshot))

    def at(self, height: int) -> dict[int, int]:
        heights = [entry[0] for entry in self.entries]
        position = bisect.bisect_right(heights, height) - 1
        if position < 0:
            return {}
        return dict(self.entries[position][1])

    def weight_of(self, miner: int, height: int) -> int:
        return self.at(height).get(miner, 0)

    def total(self, height: int) -> int:
        return sum(self.at(height).values())

    def copy(self) -> "WeightTable":
        return WeightTable(entries=list(self.entries))
