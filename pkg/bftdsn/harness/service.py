from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, Sequence

from bftdsn.decorators import log_action
from bftdsn.harness.config import ScenarioConfig
from bftdsn.harness.experiments import (
    Estimate,
    LinearFit,
    honest_pos_run,
    pos_detection,
    retrieval_tries,
    storage_cost,
)
from bftdsn.harness.runner import ScenarioResult, grid_points, run_scenario
from bftdsn.harness.runner import sweep as run_sweep
from bftdsn.harness.storage import ResultStorage
from bftdsn.logging_config import setup_logging, setup_sim_logging


class HarnessService:
    def __init__(self, workers: int = 1) -> None:
        setup_logging()
        setup_sim_logging()
        self._workers = workers
        self._action_context: dict[str, object] = {}

    @log_action("RUN", verbose=True)
    def run(self, scenario: ScenarioConfig) -> ScenarioResult:
        result = run_scenario(scenario, workers=self._workers)
        summary = result.aggregates()
        self._action_context = {
            "details": (
                f"trials={summary['trials']} success_rate={summary['success_rate']:.4f} "
                f"safety={summary['safety_violations']} liveness={summary['liveness_failures']}"
            )
        }
        return result

    @log_action("SWEEP", verbose=True)
    def sweep(
        self, scenario: ScenarioConfig, grid: Mapping[str, Sequence[Any]]
    ) -> list[ScenarioResult]:
        results = run_sweep(scenario, grid, workers=self._workers)
        violated = sum(1 for result in results if result.violated)
        self._action_context = {
            "details": f"points={len(grid_points(grid))} violated={violated}"
        }
        return results

    @log_action("EMIT")
    def emit(
        self,
        results: Sequence[ScenarioResult],
        out_dir: Path | None = None,
        formats: Sequence[str] = ("csv", "json"),
    ) -> list[Path]:
        storage = ResultStorage(out_dir)
        return storage.emit(results, formats)

    @log_action("PLOT_DATA")
    def plot_data(self, csv_path: Path, out_path: Path | None = None) -> Path:
        storage = ResultStorage(Path(csv_path).parent)
        return storage.plot_data(Path(csv_path), out_path)

    @log_action("EXPERIMENT", verbose=True)
    def experiment(self, kind: str, scenario: ScenarioConfig) -> Estimate | LinearFit | int:
        """Monte Carlo checks: ``pos``, ``pos-honest``, ``tries`` or ``storage``."""
        seed = scenario.seed
        trials = scenario.trials
        if kind == "pos":
            outcome: Estimate | LinearFit | int = pos_detection(
                epochs=2048, trials=trials, seed=seed
            )
        elif kind == "pos-honest":
            outcome = honest_pos_run(challenges=10_000, seed=seed)
        elif kind == "tries":
            fraction = scenario.adversary.byzantine_fraction
            weights = {miner: 1 for miner in range(1, scenario.n + 1)}
            byzantine = range(1, int(fraction * scenario.n) + 1)
            outcome = retrieval_tries(weights, byzantine, sessions=trials, seed=seed)
        elif kind == "storage":
            sizes = [size * scenario.workload.file_size for size in range(1, 21)]
            outcome = storage_cost(scenario.n, sizes)
        else:
            raise ValueError(f"Неизвестный эксперимент '{kind}'")
        self._action_context = {"details": f"kind={kind} outcome={outcome}"}
        return outcome
