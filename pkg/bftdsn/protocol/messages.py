"""Messages exchanged by clients and miners.

All of them travel as ``codec.pack`` frames. Consensus traffic reuses the
``Proposal`` and ``Vote`` types directly.
"""

from __future__ import annotations

from dataclasses import dataclass

from bftdsn.core.codec import wire_type
from bftdsn.core.models import Block, SignedChunk, Transaction
from bftdsn.core.utils import u32, u64
from bftdsn.core.wts import AggregateSignature, MessageTag, PartialSignature, tagged_message


@wire_type(50)
@dataclass(frozen=True)
class TxSubmit:
    tx: Transaction


@wire_type(51)
@dataclass(frozen=True)
class FileUpload:
    file_id: bytes
    data: bytes
    client: int
    session: int


@wire_type(52)
@dataclass(frozen=True)
class EncoderNack:
    file_id: bytes
    encoder: int
    session: int
    reason: str


@wire_type(53)
@dataclass(frozen=True)
class ChunkTransfer:
    chunk: SignedChunk
    client: int
    session: int


@wire_type(54)
@dataclass(frozen=True)
class PartialTransfer:
    """Partials from one storage miner for every chunk a host holds.

    Entries are ``(index, fingerprint value, partial)``: the value is the
    fingerprint the signer claims for that chunk.
    """

    file_id: bytes
    partials: tuple[tuple[int, int, PartialSignature], ...]


def ack_message(file_id: bytes, index: int, sector_id: int, host: int) -> bytes:
    return tagged_message(MessageTag.STORAGE_ACK, file_id, u32(index), u64(sector_id), u64(host))


@wire_type(55)
@dataclass(frozen=True)
class StorageAck:
    file_id: bytes
    index: int
    sector_id: int
    host: int
    session: int
    signature: bytes


@wire_type(56)
@dataclass(frozen=True)
class ChunkNack:
    file_id: bytes
    index: int
    host: int
    session: int
    evidence: SignedChunk


@wire_type(57)
@dataclass(frozen=True)
class RetrieveRequest:
    file_id: bytes
    client: int
    session: int


@wire_type(58)
@dataclass(frozen=True)
class ChunkRequest:
    file_id: bytes
    indices: tuple[int, ...]
    requester: int
    session: int


@wire_type(59)
@dataclass(frozen=True)
class ChunkResponse:
    file_id: bytes
    index: int
    payload: bytes
    certificate: AggregateSignature | None
    session: int


@wire_type(60)
@dataclass(frozen=True)
class RetrieveResponse:
    file_id: bytes
    data: bytes
    session: int
    ok: bool
    reason: str = ""


@wire_type(61)
@dataclass(frozen=True)
class SyncRequest:
    from_height: int
    requester: int


@wire_type(62)
@dataclass(frozen=True)
class SyncResponse:
    blocks: tuple[Block, ...]
