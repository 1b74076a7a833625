from __future__ import annotations

import math
from dataclasses import dataclass

from bftdsn.core.exceptions import EmptyFileError, InsufficientSectorsError, ParameterError
from bftdsn.core.fingerprint import BLOCK_SIZE
from bftdsn.core.ledger import compute_f


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    f: int
    k: int
    m: int

    @property
    def unit(self) -> int:
        """Padding granule: ``k`` chunks of whole fingerprint blocks."""
        return self.k * BLOCK_SIZE

    def padded_length(self, size: int) -> int:
        return max(1, math.ceil(size / self.unit)) * self.unit

    def chunk_size(self, size: int) -> int:
        return self.padded_length(size) // self.k

    @property
    def storage_ratio(self) -> float:
        return self.n / self.k


def choose_params(n: int) -> ProtocolParams:
    if n < 4:
        raise InsufficientSectorsError(n)
    f = compute_f(n)
    k, m = n - f, f
    if not f < k <= n - f or k + m != n:
        raise ParameterError(f"Недопустимые параметры кода K={k}, M={m} для n={n}")
    return ProtocolParams(n=n, f=f, k=k, m=m)


def split_file(data: bytes, params: ProtocolParams) -> list[bytes]:
    """Zero-pad to a multiple of ``k * 8`` bytes and cut into ``k`` chunks."""
    if not data:
        raise EmptyFileError()
    padded = data + bytes(params.padded_length(len(data)) - len(data))
    size = len(padded) // params.k
    return [padded[i * size : (i + 1) * size] for i in range(params.k)]


def join_file(chunks: list[bytes], file_length: int) -> bytes:
    return b"".join(chunks)[:file_length]


def retrieval_timeout_ms(delta_ms: float, bandwidth_bytes_per_ms: float, total_bytes: int) -> float:
    if bandwidth_bytes_per_ms <= 0:
        return 4 * delta_ms
    windows = math.ceil(total_bytes / (bandwidth_bytes_per_ms * delta_ms))
    return 2 * delta_ms * (2 + windows)
