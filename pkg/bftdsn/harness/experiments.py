"""Monte Carlo and regression checks of the protocol's analytic claims."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from bftdsn.core.merkle_pos import (
    SectorReplica,
    build_tree,
    random_sector_data,
    verify_proof,
)
from bftdsn.core.utils import hash_bytes, make_rng, u64, weighted_choice
from bftdsn.harness.runner import FileResult
from bftdsn.protocol.params import choose_params


@dataclass(frozen=True)
class Estimate:
    observed: float
    expected: float
    stderr: float
    samples: int

    def within(self, sigmas: float = 3.0) -> bool:
        if self.stderr == 0:
            return math.isclose(self.observed, self.expected)
        return abs(self.observed - self.expected) <= sigmas * self.stderr


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> LinearFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise ValueError("Для регрессии нужны хотя бы две различные точки")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if spread == 0 else 1.0 - float(np.sum(residual**2)) / spread
    return LinearFit(float(slope), float(intercept), r_squared)


def relative_spread(values: Iterable[float]) -> float:
    """``max / min - 1``; 0 for constant series."""
    data = [float(value) for value in values]
    low = min(data)
    return max(data) / low - 1.0 if low > 0 else math.inf


def detection_probability(leaf_count: int, epochs: int) -> float:
    return 1.0 - (1.0 - 1.0 / leaf_count) ** epochs


def honest_pos_run(
    challenges: int, leaf_count: int = 4096, fragment_size: int = 32, seed: int = 0
) -> int:
    """Consecutive proofs an intact sector passes, chaining each seed."""
    data = random_sector_data(seed, 1, leaf_count * fragment_size)
    tree = build_tree(data, fragment_size)
    replica = SectorReplica(1, tree)
    challenge = hash_bytes(b"honest-run", u64(seed))
    passed = 0
    for epoch in range(1, challenges + 1):
        proof = replica.respond(epoch, challenge)
        if not verify_proof(tree.root, proof):
            break
        passed += 1
        challenge = proof.digest()
    return passed


def pos_detection(
    epochs: int,
    trials: int = 200,
    leaf_count: int = 4096,
    fragment_size: int = 32,
    seed: int = 0,
) -> Estimate:
    """Share of trials in which one corrupted fragment is caught within ``epochs``."""
    data = random_sector_data(seed, 1, leaf_count * fragment_size)
    tree = build_tree(data, fragment_size)
    rng = make_rng(seed, "pos-detection")
    detected = 0
    for trial in range(trials):
        replica = SectorReplica(1, tree)
        replica.corrupt(int(rng.integers(leaf_count)), rng)
        challenge = hash_bytes(b"pos-trial", u64(seed), u64(trial))
        for epoch in range(1, epochs + 1):
            proof = replica.respond(epoch, challenge)
            if not verify_proof(tree.root, proof):
                detected += 1
                break
            challenge = proof.digest()
    expected = detection_probability(leaf_count, epochs)
    return Estimate(
        observed=detected / trials,
        expected=expected,
        stderr=math.sqrt(expected * (1.0 - expected) / trials),
        samples=trials,
    )


def retrieval_tries(
    weights: Mapping[int, int],
    byzantine: Iterable[int],
    sessions: int = 10_000,
    seed: int = 0,
    exclude_tried: bool = False,
) -> Estimate:
    """Tries until an honest retrieval miner is drawn, against ``1 / (1 - p)``.

    Draws use the client's weighted selection; the analytic value assumes
    independent draws, so ``exclude_tried`` is off by default.
    """
    corrupted = set(byzantine)
    total = sum(weights.values())
    p = sum(weights.get(miner, 0) for miner in corrupted) / total
    rng = make_rng(seed, "retrieval-tries")
    counts = np.empty(sessions)
    for session in range(sessions):
        tried: list[int] = []
        tries = 0
        while True:
            miner = weighted_choice(rng, dict(weights), exclude=tried if exclude_tried else ())
            tries += 1
            if miner is None or miner not in corrupted:
                break
            tried.append(miner)
        counts[session] = tries
    return Estimate(
        observed=float(counts.mean()),
        expected=1.0 / (1.0 - p),
        stderr=float(counts.std(ddof=1) / math.sqrt(sessions)) if sessions > 1 else 0.0,
        samples=sessions,
    )


def storage_cost(n: int, file_sizes: Sequence[int]) -> LinearFit:
    """Stored bytes against file size under the ``(n - f, f)`` code for ``n``."""
    params = choose_params(n)
    stored = [params.n * params.chunk_size(size) for size in file_sizes]
    return linear_fit(file_sizes, stored)


def observed_storage_cost(rows: Sequence[FileResult]) -> LinearFit:
    stored = [row for row in rows if row.put_ok]
    return linear_fit([row.file_size for row in stored], [row.stored_bytes for row in stored])


def latency_fit(rows: Sequence[FileResult], column: str = "get_latency_ms") -> LinearFit:
    ok = "get_ok" if column.startswith("get") else "put_ok"
    done = [row for row in rows if getattr(row, ok)]
    return linear_fit([row.file_size for row in done], [getattr(row, column) for row in done])
