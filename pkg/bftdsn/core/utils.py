from __future__ import annotations

import hashlib
import zlib
from typing import Iterable

import numpy as np

HASH_SIZE = 32


def hash_bytes(*parts: bytes) -> bytes:
    """Network-wide H: SHA-256 over the concatenation of ``parts``."""
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part)
    return digest.digest()


def u64(value: int) -> bytes:
    return int(value).to_bytes(8, "big")


def u32(value: int) -> bytes:
    return int(value).to_bytes(4, "big")


def short_hex(value: bytes, length: int = 12) -> str:
    return value.hex()[:length]


def make_rng(seed: int, *stream: str | int) -> np.random.Generator:
    """Independent deterministic generator for a named sub-stream of a run."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for label in stream:
        if isinstance(label, str):
            entropy.append(zlib.crc32(label.encode("utf-8")))
        else:
            entropy.append(int(label) & 0xFFFFFFFF)
    return np.random.default_rng(entropy)


def weighted_choice(
    rng: np.random.Generator,
    weights: dict[int, int],
    exclude: Iterable[int] = (),
) -> int | None:
    """Pick a key with probability proportional to its weight."""
    excluded = set(exclude)
    candidates = sorted(
        key for key, weight in weights.items() if weight > 0 and key not in excluded
    )
    if not candidates:
        return None
    values = np.array([weights[key] for key in candidates], dtype=float)
    index = int(rng.choice(len(candidates), p=values / values.sum()))
    return candidates[index]


def next_power_of_two(value: int) -> int:
    result = 1
    while result < value:
        result <<= 1
    return result
