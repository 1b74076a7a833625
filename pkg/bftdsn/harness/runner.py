from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping, Sequence

from bftdsn.core.exceptions import (
    FileNotFoundOnChainError,
    LivenessViolationError,
    ScenarioError,
)
from bftdsn.core.fingerprint import hf_compute
from bftdsn.core.ledger import compute_f
from bftdsn.core.utils import make_rng
from bftdsn.harness.config import ScenarioConfig
from bftdsn.harness.network import SimNetwork, build_network
from bftdsn.protocol.client import PutSession, RetrievalSession

logger = logging.getLogger("bftdsn.sim.harness")


@dataclass
class FileResult:
    trial: int
    seed: int
    n: int
    byzantine_fraction: float
    strategy: str
    file_index: int
    file_size: int
    put_ok: int = 0
    degraded: int = 0
    put_tries: int = 0
    put_latency_ms: float = 0.0
    get_ok: int = 0
    get_tries: int = 0
    get_latency_ms: float = 0.0
    stored_bytes: int = 0
    padded_bytes: int = 0
    wrong_file: int = 0


FILE_FIELDS = tuple(item.name for item in fields(FileResult))


@dataclass
class TrialResult:
    trial: int
    seed: int
    n: int
    f: int
    byzantine_fraction: float
    strategy: str
    file_size: int = 0
    byzantine_weight: int = 0
    within_budget: int = 1
    file_count: int = 0
    successes: int = 0
    puts_ok: int = 0
    puts_degraded: int = 0
    gets_attempted: int = 0
    gets_ok: int = 0
    put_tries: int = 0
    get_tries: int = 0
    put_latency_ms: float = 0.0
    get_latency_ms: float = 0.0
    stored_bytes: int = 0
    padded_bytes: int = 0
    wrong_files: int = 0
    wrong_chunks: int = 0
    conflicting_commits: int = 0
    digest_divergences: int = 0
    replay_mismatches: int = 0
    liveness_failure: int = 0
    liveness_reason: str = ""
    heights: int = 0
    max_round_post_gst: int = 0
    rejected_chunks: int = 0
    faults_submitted: int = 0
    reports_submitted: int = 0
    regeneration_failures: int = 0
    sybil_sectors_committed: int = 0
    delay_violations: int = 0
    sim_time_ms: float = 0.0
    events: int = 0
    trace_digest: str = ""
    rows: list[FileResult] = field(default_factory=list, repr=False)

    def row(self) -> dict[str, Any]:
        values = asdict(self)
        values.pop("rows")
        return values

    @property
    def safety_violations(self) -> int:
        return (
            self.conflicting_commits
            + self.digest_divergences
            + self.replay_mismatches
            + self.wrong_files
            + self.wrong_chunks
        )


TRIAL_FIELDS = tuple(item.name for item in fields(TrialResult) if item.name != "rows")


def aggregate(rows: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    """Scenario aggregates, computed from per-trial rows only."""

    def total(key: str) -> float:
        return sum(row[key] for row in rows)

    files = total("file_count")
    gets = total("gets_attempted")
    padded = total("padded_bytes")
    puts_ok = total("puts_ok")
    gets_ok = total("gets_ok")
    safety = sum(
        row["conflicting_commits"]
        + row["digest_divergences"]
        + row["replay_mismatches"]
        + row["wrong_files"]
        + row["wrong_chunks"]
        for row in rows
    )
    liveness = sum(row["liveness_failure"] * row["within_budget"] for row in rows)
    return {
        "trials": len(rows),
        "files": files,
        "success_rate": total("successes") / files if files else 1.0,
        "mean_tries": total("get_tries") / gets if gets else 0.0,
        "storage_ratio": total("stored_bytes") / padded if padded else 0.0,
        "mean_put_latency_ms": total("put_latency_ms") / puts_ok if puts_ok else 0.0,
        "mean_get_latency_ms": total("get_latency_ms") / gets_ok if gets_ok else 0.0,
        "wrong_files": total("wrong_files"),
        "safety_violations": safety,
        "liveness_failures": liveness,
        "max_round_post_gst": max((row["max_round_post_gst"] for row in rows), default=0),
    }


@dataclass
class ScenarioResult:
    scenario: str
    seed: int
    n: int
    byzantine_fraction: float
    strategy: str
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def files(self) -> list[FileResult]:
        return [row for trial in self.trials for row in trial.rows]

    def aggregates(self) -> dict[str, Any]:
        return aggregate([trial.row() for trial in self.trials])

    @property
    def success_rate(self) -> float:
        return self.aggregates()["success_rate"]

    @property
    def mean_tries(self) -> float:
        return self.aggregates()["mean_tries"]

    @property
    def storage_ratio(self) -> float:
        return self.aggregates()["storage_ratio"]

    @property
    def violated(self) -> bool:
        summary = self.aggregates()
        return summary["safety_violations"] > 0 or summary["liveness_failures"] > 0


# ------------------------------------------------------------------ checks


def _conflicting_commits(sim: SimNetwork) -> int:
    conflicts = 0
    chains = [node.chain for node in sim.honest]
    for height in range(max((len(chain) for chain in chains), default=0)):
        hashes = {chain[height].block_hash for chain in chains if len(chain) > height}
        if len(hashes) > 1:
            logger.error("conflicting commits at height=%s", height + 1)
            conflicts += 1
    return conflicts


def _digest_divergences(sim: SimNetwork) -> int:
    divergences = 0
    honest = sim.honest
    heights = set().union(*(node.digests for node in honest))
    for height in sorted(heights):
        digests = {node.digests[height] for node in honest if height in node.digests}
        if len(digests) > 1:
            logger.error("state digests diverge at height=%s", height)
            divergences += 1
    return divergences


def _wrong_chunks(sim: SimNetwork) -> int:
    params = sim.config.fingerprint_params
    wrong = 0
    for node in sim.honest:
        for (file_id, index), hosted in node.hosted.items():
            payload = node.stored_chunk(file_id, index)
            if payload is not None and hf_compute(payload, params).value != hosted.expected:
                logger.error("node=%s stores a wrong chunk=%s", node.node_id, index)
                wrong += 1
    return wrong


def _replay_mismatches(sim: SimNetwork) -> int:
    mismatches = 0
    for node in sim.honest:
        if node.store is None:
            continue
        state, _ = node.store.replay(sim.genesis())
        if state.digest() != node.state.digest():
            logger.error("node=%s replay does not reproduce its state", node.node_id)
            mismatches += 1
    return mismatches


# ----------------------------------------------------------------- workload


def _wait(sim: SimNetwork, predicate, reason: str) -> None:
    network = sim.network
    network.run_until(predicate, network.now + sim.scenario.consensus.op_timeout_ms, reason)


def _put_row(row: FileResult, put: PutSession) -> None:
    row.put_tries = put.tries
    if not put.done:
        return
    row.put_ok = 1
    row.degraded = int(put.degraded)
    row.put_latency_ms = put.latency_ms or 0.0
    body = put.store_tx.payload
    row.stored_bytes = body.n * body.chunk_size
    row.padded_bytes = len(body.fingerprints) * body.chunk_size


def _get_row(row: FileResult, get: RetrievalSession, data: bytes) -> None:
    row.get_tries = get.tries
    if get.done:
        row.get_ok = int(get.data == data)
        row.wrong_file = int(get.data != data)
        row.get_latency_ms = get.latency_ms or 0.0


def run_trial(scenario: ScenarioConfig, trial: int = 0) -> TrialResult:
    seed = scenario.seed + trial
    scenario = scenario.with_overrides(seed=seed)
    sim = build_network(scenario)
    network = sim.network
    workload = scenario.workload
    rng = make_rng(seed, "workload")
    result = TrialResult(
        trial=trial,
        seed=seed,
        n=scenario.n,
        f=compute_f(scenario.n),
        byzantine_fraction=scenario.adversary.byzantine_fraction,
        strategy=scenario.adversary.strategy,
        file_size=workload.file_size,
    )

    rows: list[FileResult] = []
    gst_height = 0
    sim.start()
    try:
        network.run_until(
            lambda: network.now >= scenario.network.gst_ms and sim.min_height() >= 1,
            scenario.network.gst_ms + scenario.consensus.op_timeout_ms,
            "first block after GST",
        )
        gst_height = sim.min_height()

        puts: list[tuple[FileResult, bytes, PutSession]] = []
        for index in range(workload.files):
            client = sim.clients[index % len(sim.clients)]
            data = rng.bytes(workload.file_size)
            row = FileResult(
                trial=trial,
                seed=seed,
                n=scenario.n,
                byzantine_fraction=result.byzantine_fraction,
                strategy=result.strategy,
                file_index=index,
                file_size=workload.file_size,
            )
            rows.append(row)
            put = client.client_put(data)
            _wait(sim, lambda: put.settled, f"put of file {index}")
            _put_row(row, put)
            puts.append((row, data, put))

        if workload.retrieve:
            for row, data, put in puts:
                if not put.done:
                    continue
                _wait(
                    sim,
                    lambda: sim.gateway.state.manifest(put.file_id) is not None,
                    f"manifest of file {row.file_index}",
                )
                client = sim.clients[row.file_index % len(sim.clients)]
                try:
                    get = client.client_get(put.file_id)
                except FileNotFoundOnChainError:
                    continue
                _wait(sim, lambda: get.settled, f"get of file {row.file_index}")
                _get_row(row, get, data)

        target = scenario.consensus.min_heights
        if target:
            _wait(sim, lambda: sim.min_height() >= target, f"height {target}")
    except LivenessViolationError as exc:
        result.liveness_failure = 1
        result.liveness_reason = str(exc)
        logger.warning("scenario=%s seed=%s liveness: %s", scenario.name, seed, exc)

    _fill(result, rows, sim, gst_height)
    logger.info(
        "scenario=%s seed=%s files=%s successes=%s safety=%s liveness=%s",
        scenario.name,
        seed,
        result.file_count,
        result.successes,
        result.safety_violations,
        result.liveness_failure,
    )
    return result


def _fill(result: TrialResult, rows: list[FileResult], sim: SimNetwork, gst_height: int) -> None:
    retrieve = sim.scenario.workload.retrieve
    result.rows = rows
    result.file_count = len(rows)
    for row in rows:
        success = row.put_ok and (row.get_ok if retrieve else True)
        result.successes += int(bool(success))
        result.puts_ok += row.put_ok
        result.puts_degraded += row.degraded
        result.gets_attempted += int(row.get_tries > 0)
        result.gets_ok += row.get_ok
        result.put_tries += row.put_tries
        result.get_tries += row.get_tries
        result.put_latency_ms += row.put_latency_ms
        result.get_latency_ms += row.get_latency_ms
        result.stored_bytes += row.stored_bytes
        result.padded_bytes += row.padded_bytes
        result.wrong_files += row.wrong_file

    gateway = sim.gateway
    result.byzantine_weight = sim.byzantine_weight()
    result.within_budget = int(result.byzantine_weight <= gateway.state.f)
    result.conflicting_commits = _conflicting_commits(sim)
    result.digest_divergences = _digest_divergences(sim)
    result.wrong_chunks = _wrong_chunks(sim)
    result.replay_mismatches = _replay_mismatches(sim)
    result.heights = sim.min_height()
    result.max_round_post_gst = max(
        (block.commit_round for block in gateway.chain[gst_height:]), default=0
    )
    result.rejected_chunks = sum(node.rejected_chunks for node in sim.honest)
    result.faults_submitted = sum(node.faults_submitted for node in sim.honest)
    result.reports_submitted = sum(client.reports_submitted for client in sim.clients)
    result.regeneration_failures = sim.coalition.regeneration_failures
    result.sybil_sectors_committed = sum(
        1 for sid in sim.coalition.sybil_sectors if sid in gateway.state.sectors
    )
    result.delay_violations = sim.network.delay_violations
    result.sim_time_ms = sim.network.now
    result.events = sim.network.events_processed
    result.trace_digest = sim.network.trace_digest()


def _collect(scenario: ScenarioConfig, trials: list[TrialResult]) -> ScenarioResult:
    return ScenarioResult(
        scenario=scenario.name,
        seed=scenario.seed,
        n=scenario.n,
        byzantine_fraction=scenario.adversary.byzantine_fraction,
        strategy=scenario.adversary.strategy,
        trials=trials,
    )


def run_scenario(scenario: ScenarioConfig, workers: int = 1) -> ScenarioResult:
    """Every trial of ``scenario``; trial ``i`` runs with seed ``seed + i``."""
    jobs = range(scenario.trials)
    if workers <= 1:
        trials = [run_trial(scenario, trial) for trial in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(lambda trial: run_trial(scenario, trial), jobs))
    return _collect(scenario, trials)


def grid_points(grid: Mapping[str, Sequence[Any]]) -> list[dict[str, Any]]:
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise ScenarioError("сетка параметров пуста")
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*grid.values())]


def sweep(
    base: ScenarioConfig,
    grid: Mapping[str, Sequence[Any]],
    workers: int = 1,
) -> list[ScenarioResult]:
    """One ``ScenarioResult`` per grid point, in grid order."""
    scenarios = [base.with_overrides(**point) for point in grid_points(grid)]
    jobs = [(index, trial) for index, item in enumerate(scenarios) for trial in range(item.trials)]

    def run(job: tuple[int, int]) -> TrialResult:
        index, trial = job
        return run_trial(scenarios[index], trial)

    if workers <= 1:
        outcomes = [run(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, jobs))

    grouped: dict[int, list[TrialResult]] = {index: [] for index in range(len(scenarios))}
    for (index, _), outcome in zip(jobs, outcomes):
        grouped[index].append(outcome)
    return [_collect(scenarios[index], grouped[index]) for index in range(len(scenarios))]
