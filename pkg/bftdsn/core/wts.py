"""Weighted threshold signatures as a weighted multi-signature.

Every miner signs with its own deterministic key (Ed25519 at 128-bit security,
Ed448 at 256-bit). An aggregate is the list of distinct partials; it passes a
threshold ``t`` when every member verifies and the signers' weights, taken
from the public weight vector, add up to at least ``t``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed448 import (
    Ed448PrivateKey,
    Ed448PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from bftdsn.core.codec import wire_type
from bftdsn.core.exceptions import (
    InvalidPartialError,
    ParameterError,
    ShapeError,
    UnsupportedSecurityLevelError,
    WeightVectorError,
)
from bftdsn.core.utils import HASH_SIZE, hash_bytes, u32, u64

SUPPORTED_SECURITY_BITS = (128, 256)
_PRIVATE_KEY_SIZE = {128: 32, 256: 57}


class MessageTag(IntEnum):
    CHUNK_FINGERPRINT = 0x01
    VOTE = 0x02
    TRANSACTION = 0x03
    CHUNK_TRANSFER = 0x04
    STORAGE_ACK = 0x05


def tagged_message(tag: MessageTag, *parts: bytes) -> bytes:
    return bytes([int(tag)]) + b"".join(parts)


def chunk_message(file_id: bytes, index: int, fingerprint: bytes) -> bytes:
    """What storage miners sign for chunk ``index`` of ``file_id``."""
    return tagged_message(MessageTag.CHUNK_FINGERPRINT, file_id, u32(index), fingerprint)


@dataclass(frozen=True)
class PublicParams:
    security_bits: int
    seed: bytes


@dataclass(frozen=True)
class KeyRing:
    """Public side of a key epoch: serves as both ``vk`` and ``ak``."""

    security_bits: int
    height: int
    public_keys: Mapping[int, bytes]
    weights: Mapping[int, int]

    def weight_of(self, signer: int) -> int:
        return self.weights.get(signer, 0)

    @property
    def total_weight(self) -> int:
        return sum(self.weights.values())

    def knows(self, signer: int) -> bool:
        return signer in self.public_keys


@dataclass(frozen=True)
class SigningKey:
    signer: int
    security_bits: int
    _private: Ed25519PrivateKey | Ed448PrivateKey = field(repr=False, compare=False)

    def sign(self, digest: bytes) -> bytes:
        return self._private.sign(digest)

    @property
    def public_bytes(self) -> bytes:
        return self._private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass(frozen=True)
class WtsKeys:
    verification_key: KeyRing
    aggregation_key: KeyRing
    signing_keys: Mapping[int, SigningKey]
    weights: Mapping[int, int]


@wire_type(2)
@dataclass(frozen=True)
class PartialSignature:
    signer: int
    message_digest: bytes
    tag: bytes


@wire_type(3)
@dataclass(frozen=True)
class AggregateSignature:
    parts: tuple[PartialSignature, ...] = ()
    key_height: int = 0

    @property
    def signers(self) -> list[int]:
        return [part.signer for part in self.parts]

    def effective_weight(self, key: KeyRing) -> int:
        return sum(key.weight_of(signer) for signer in set(self.signers))

    def to_bytes(self) -> bytes:
        out = [u64(self.key_height), u32(len(self.parts))]
        for part in self.parts:
            out.append(u64(part.signer) + part.message_digest)
            out.append(len(part.tag).to_bytes(2, "big") + part.tag)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AggregateSignature":
        try:
            key_height = int.from_bytes(raw[0:8], "big")
            count = int.from_bytes(raw[8:12], "big")
            offset = 12
            parts = []
            for _ in range(count):
                signer = int.from_bytes(raw[offset : offset + 8], "big")
                digest = raw[offset + 8 : offset + 8 + HASH_SIZE]
                offset += 8 + HASH_SIZE
                size = int.from_bytes(raw[offset : offset + 2], "big")
                tag = raw[offset + 2 : offset + 2 + size]
                offset += 2 + size
                if len(digest) != HASH_SIZE or len(tag) != size:
                    raise ValueError("truncated")
                parts.append(PartialSignature(signer, digest, tag))
        except ValueError as exc:
            raise ShapeError("Повреждённая агрегированная подпись") from exc
        if offset != len(raw):
            raise ShapeError("Лишние байты после агрегированной подписи")
        return cls(parts=tuple(parts), key_height=key_height)


def wts_setup(security_bits: int, seed: int | bytes = 0) -> PublicParams:
    if security_bits not in SUPPORTED_SECURITY_BITS:
        raise UnsupportedSecurityLevelError(security_bits)
    raw_seed = seed if isinstance(seed, bytes) else u64(seed)
    return PublicParams(
        security_bits=security_bits,
        seed=hash_bytes(b"wts-setup", u32(security_bits), raw_seed),
    )


@lru_cache(maxsize=4096)
def _private_key(security_bits: int, seed: bytes, signer: int):
    size = _PRIVATE_KEY_SIZE[security_bits]
    material = hashlib.shake_256(seed + u64(signer)).digest(size)
    if security_bits == 128:
        return Ed25519PrivateKey.from_private_bytes(material)
    return Ed448PrivateKey.from_private_bytes(material)


def wts_keygen(
    pp: PublicParams,
    nn: int,
    weights: Sequence[int],
    miner_ids: Sequence[int] | None = None,
    height: int = 0,
) -> WtsKeys:
    """Keys for ``nn`` miners; ``miner_ids`` defaults to ``1..nn``."""
    if nn < 1:
        raise ParameterError("Нужен хотя бы один майнер")
    if len(weights) != nn:
        raise WeightVectorError(nn, len(weights))
    ids = list(miner_ids) if miner_ids is not None else list(range(1, nn + 1))
    if len(ids) != nn or len(set(ids)) != nn:
        raise ParameterError("Идентификаторы майнеров должны быть различны")
    if any(int(weight) <= 0 for weight in weights):
        raise ParameterError("Веса должны быть положительными")

    signing = {signer: signing_key(pp, signer) for signer in ids}
    weight_map = {signer: int(weight) for signer, weight in zip(ids, weights)}
    ring = KeyRing(
        security_bits=pp.security_bits,
        height=height,
        public_keys={signer: key.public_bytes for signer, key in signing.items()},
        weights=weight_map,
    )
    return WtsKeys(
        verification_key=ring,
        aggregation_key=ring,
        signing_keys=signing,
        weights=weight_map,
    )


def wts_psign(message: bytes, sk: SigningKey) -> PartialSignature:
    digest = hash_bytes(message)
    return PartialSignature(signer=sk.signer, message_digest=digest, tag=sk.sign(digest))


@lru_cache(maxsize=65536)
def _tag_valid(security_bits: int, public: bytes, digest: bytes, tag: bytes) -> bool:
    try:
        if security_bits == 128:
            Ed25519PublicKey.from_public_bytes(public).verify(tag, digest)
        else:
            Ed448PublicKey.from_public_bytes(public).verify(tag, digest)
    except (InvalidSignature, ValueError):
        return False
    return True


def partial_valid(partial: PartialSignature, key: KeyRing, digest: bytes | None = None) -> bool:
    if digest is not None and partial.message_digest != digest:
        return False
    public = key.public_keys.get(partial.signer)
    if public is None:
        return False
    return _tag_valid(key.security_bits, public, partial.message_digest, partial.tag)


def wts_aggregate(
    partials: Iterable[PartialSignature], ak: KeyRing
) -> AggregateSignature:
    """Dedupe by signer; raises ``InvalidPartialError`` naming a bad signer."""
    seen: dict[int, PartialSignature] = {}
    digest: bytes | None = None
    for partial in partials:
        if partial.signer in seen:
            continue
        if not partial_valid(partial, ak):
            raise InvalidPartialError(partial.signer)
        if digest is None:
            digest = partial.message_digest
        elif partial.message_digest != digest:
            raise InvalidPartialError(partial.signer, "подписано другое сообщение")
        seen[partial.signer] = partial
    return AggregateSignature(parts=tuple(seen.values()), key_height=ak.height)


def wts_verify(message: bytes, sig: AggregateSignature, vk: KeyRing, t: int) -> bool:
    digest = hash_bytes(message)
    signers: set[int] = set()
    for part in sig.parts:
        if not partial_valid(part, vk, digest):
            return False
        signers.add(part.signer)
    return sum(vk.weight_of(signer) for signer in signers) >= t


def signing_key(pp: PublicParams, node_id: int) -> SigningKey:
    """Per-node key; clients sign transactions with the same derivation."""
    return SigningKey(
        signer=node_id,
        security_bits=pp.security_bits,
        _private=_private_key(pp.security_bits, pp.seed, node_id),
    )


@lru_cache(maxsize=4096)
def public_key(pp: PublicParams, node_id: int) -> bytes:
    return signing_key(pp, node_id).public_bytes


def keyring(pp: PublicParams, weights: Mapping[int, int], height: int) -> KeyRing:
    """Ring of the miners with positive weight in ``weights``."""
    active = {miner: int(w) for miner, w in sorted(weights.items()) if w > 0}
    return KeyRing(
        security_bits=pp.security_bits,
        height=height,
        public_keys={miner: public_key(pp, miner) for miner in active},
        weights=active,
    )


def signature_valid(pp: PublicParams, signer: int, message: bytes, tag: bytes) -> bool:
    return _tag_valid(pp.security_bits, public_key(pp, signer), hash_bytes(message), tag)
