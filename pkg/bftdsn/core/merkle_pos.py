"""Merkle trees over sectors and the challenge-response proof of storage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bftdsn.core.codec import wire_type
from bftdsn.core.exceptions import (
    LeafIndexError,
    OutOfBoundsWriteError,
    ShapeError,
    TreeAlignmentError,
)
from bftdsn.core.utils import HASH_SIZE, hash_bytes, make_rng, u64

DEFAULT_FRAGMENT_SIZE = 256

_LEAF_PREFIX = b"\x00"
_NODE_PREFIX = b"\x01"


def leaf_hash(fragment: bytes) -> bytes:
    return hash_bytes(_LEAF_PREFIX, fragment)


def node_hash(left: bytes, right: bytes) -> bytes:
    return hash_bytes(_NODE_PREFIX, left, right)


@dataclass(frozen=True)
class SectorTree:
    fragment_size: int
    fragments: tuple[bytes, ...]
    levels: tuple[tuple[bytes, ...], ...]

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    @property
    def leaves(self) -> tuple[bytes, ...]:
        return self.levels[0]

    @property
    def leaf_count(self) -> int:
        return len(self.fragments)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def size(self) -> int:
        return self.leaf_count * self.fragment_size

    def data(self) -> bytes:
        return b"".join(self.fragments)

    def read(self, offset: int, length: int) -> bytes:
        if offset < 0 or length < 0 or offset + length > self.size:
            raise OutOfBoundsWriteError(offset, length, self.size)
        first = offset // self.fragment_size
        last = (offset + length - 1) // self.fragment_size if length else first
        window = b"".join(self.fragments[first : last + 1])
        start = offset - first * self.fragment_size
        return window[start : start + length]


@wire_type(4)
@dataclass(frozen=True)
class PosProof:
    sector_id: int
    epoch: int
    leaf_index: int
    leaf_data: bytes
    path: tuple[bytes, ...]
    challenge_seed: bytes = b""

    def to_bytes(self) -> bytes:
        return (
            u64(self.sector_id)
            + u64(self.epoch)
            + u64(self.leaf_index)
            + self.leaf_data
            + b"".join(self.path)
        )

    @classmethod
    def from_bytes(
        cls, raw: bytes, fragment_size: int, challenge_seed: bytes = b""
    ) -> "PosProof":
        body = len(raw) - 24 - fragment_size
        if body < 0 or body % HASH_SIZE:
            raise ShapeError("Повреждённое доказательство хранения")
        head = raw[24 : 24 + fragment_size]
        tail = raw[24 + fragment_size :]
        return cls(
            sector_id=int.from_bytes(raw[0:8], "big"),
            epoch=int.from_bytes(raw[8:16], "big"),
            leaf_index=int.from_bytes(raw[16:24], "big"),
            leaf_data=head,
            path=tuple(tail[i : i + HASH_SIZE] for i in range(0, len(tail), HASH_SIZE)),
            challenge_seed=challenge_seed,
        )

    def digest(self) -> bytes:
        return hash_bytes(self.to_bytes())

    @property
    def size(self) -> int:
        return len(self.path) * HASH_SIZE + len(self.leaf_data)


def _is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


def build_tree(sector_data: bytes, fragment_size: int = DEFAULT_FRAGMENT_SIZE) -> SectorTree:
    size = len(sector_data)
    if fragment_size <= 0 or size % fragment_size:
        raise TreeAlignmentError(size, fragment_size)
    count = size // fragment_size
    if not _is_power_of_two(count):
        raise TreeAlignmentError(size, fragment_size)

    fragments = tuple(
        bytes(sector_data[i : i + fragment_size]) for i in range(0, size, fragment_size)
    )
    level = tuple(leaf_hash(fragment) for fragment in fragments)
    levels = [level]
    while len(level) > 1:
        level = tuple(node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2))
        levels.append(level)
    return SectorTree(fragment_size=fragment_size, fragments=fragments, levels=tuple(levels))


def _path(tree: SectorTree, leaf_index: int) -> tuple[bytes, ...]:
    siblings = []
    index = leaf_index
    for level in tree.levels[:-1]:
        siblings.append(level[index ^ 1])
        index >>= 1
    return tuple(siblings)


def prove(
    tree: SectorTree,
    leaf_index: int,
    sector_id: int = 0,
    epoch: int = 0,
    challenge_seed: bytes = b"",
) -> PosProof:
    if not 0 <= leaf_index < tree.leaf_count:
        raise LeafIndexError(leaf_index, tree.leaf_count)
    return PosProof(
        sector_id=sector_id,
        epoch=epoch,
        leaf_index=leaf_index,
        leaf_data=tree.fragments[leaf_index],
        path=_path(tree, leaf_index),
        challenge_seed=challenge_seed,
    )


def fold_path(leaf_data: bytes, leaf_index: int, path: tuple[bytes, ...]) -> bytes:
    current = leaf_hash(leaf_data)
    index = leaf_index
    for sibling in path:
        current = node_hash(sibling, current) if index & 1 else node_hash(current, sibling)
        index >>= 1
    return current


def verify_proof(root: bytes, proof: PosProof) -> bool:
    try:
        leaf_count = 1 << len(proof.path)
        if not 0 <= proof.leaf_index < leaf_count:
            return False
        if any(len(sibling) != HASH_SIZE for sibling in proof.path):
            return False
        if proof.challenge_seed and proof.leaf_index != challenge_index(
            proof.challenge_seed, leaf_count
        ):
            return False
        return fold_path(proof.leaf_data, proof.leaf_index, proof.path) == root
    except (TypeError, ValueError):
        return False


def challenge_index(previous_proof_digest: bytes, leaf_count: int) -> int:
    if leaf_count < 1:
        raise ShapeError("В дереве нет листьев")
    value = int.from_bytes(hash_bytes(previous_proof_digest)[:8], "big")
    return value % leaf_count


def initial_challenge_seed(sector_id: int, genesis_hash: bytes) -> bytes:
    return hash_bytes(u64(sector_id), genesis_hash)


def update_tree(tree: SectorTree, offset: int, new_data: bytes) -> SectorTree:
    length = len(new_data)
    if offset < 0 or offset + length > tree.size:
        raise OutOfBoundsWriteError(offset, length, tree.size)
    if length == 0:
        return tree

    size = tree.fragment_size
    first = offset // size
    last = (offset + length - 1) // size

    fragments = list(tree.fragments)
    window = bytearray(b"".join(fragments[first : last + 1]))
    start = offset - first * size
    window[start : start + length] = new_data
    for position, index in enumerate(range(first, last + 1)):
        fragments[index] = bytes(window[position * size : (position + 1) * size])

    levels = [list(level) for level in tree.levels]
    for index in range(first, last + 1):
        levels[0][index] = leaf_hash(fragments[index])
    low, high = first, last
    for depth in range(1, len(levels)):
        low, high = low >> 1, high >> 1
        below = levels[depth - 1]
        for index in range(low, high + 1):
            levels[depth][index] = node_hash(below[2 * index], below[2 * index + 1])

    return SectorTree(
        fragment_size=size,
        fragments=tuple(fragments),
        levels=tuple(tuple(level) for level in levels),
    )


def random_sector_data(seed: int, sector_id: int, size: int) -> bytes:
    """Seeded pseudorandom fill for a freshly pledged sector."""
    return make_rng(seed, "sector-fill", sector_id).bytes(size)


@dataclass
class SectorReplica:
    """What a miner actually holds for a sector, next to the committed tree.

    ``altered`` maps fragment index to the bytes the holder would serve in
    place of the committed fragment (erased fragments read back as zeros).
    """

    sector_id: int
    tree: SectorTree
    altered: dict[int, bytes] = field(default_factory=dict)

    def erase(self, index: int) -> None:
        self.altered[index] = bytes(self.tree.fragment_size)

    def corrupt(self, index: int, rng: np.random.Generator | None = None) -> None:
        fragment = bytearray(self.altered.get(index, self.tree.fragments[index]))
        position = int(rng.integers(len(fragment))) if rng is not None else 0
        fragment[position] ^= 0xFF
        self.altered[index] = bytes(fragment)

    def keep_fraction(self, fraction: float, rng: np.random.Generator) -> None:
        """Drop everything except a random ``fraction`` of the fragments."""
        kept = int(round(fraction * self.tree.leaf_count))
        order = rng.permutation(self.tree.leaf_count)
        for index in order[kept:]:
            self.erase(int(index))

    def holds(self, index: int) -> bool:
        return index not in self.altered

    def respond(self, epoch: int, challenge_seed: bytes) -> PosProof:
        index = challenge_index(challenge_seed, self.tree.leaf_count)
        proof = prove(self.tree, index, self.sector_id, epoch, challenge_seed)
        if index in self.altered:
            return PosProof(
                sector_id=proof.sector_id,
                epoch=proof.epoch,
                leaf_index=proof.leaf_index,
                leaf_data=self.altered[index],
                path=proof.path,
                challenge_seed=challenge_seed,
            )
        return proof
