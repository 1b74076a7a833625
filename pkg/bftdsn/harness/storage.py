from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from tempfile import NamedTemporaryFile
from typing import Any, Sequence, get_type_hints

from bftdsn.core.exceptions import StorageError
from bftdsn.harness.runner import (
    FILE_FIELDS,
    TRIAL_FIELDS,
    FileResult,
    ScenarioResult,
    TrialResult,
    aggregate,
)
from bftdsn.infra.settings import SettingsLoader

POINT_FIELDS = ("point", "scenario")
PLOT_KEYS = ("n", "byzantine_fraction", "strategy", "file_size")
PLOT_COLUMNS = (
    "trials",
    "success_rate",
    "mean_tries",
    "storage_ratio",
    "mean_put_latency_ms",
    "mean_get_latency_ms",
    "safety_violations",
)


def _column_types(cls: type) -> dict[str, type]:
    hints = get_type_hints(cls)
    return {name: hint for name, hint in hints.items() if hint in (int, float, str)}


_TRIAL_TYPES = {"point": int, "scenario": str, **_column_types(TrialResult)}
_FILE_TYPES = {"point": int, "scenario": str, **_column_types(FileResult)}


def _parse(row: dict[str, str], types: dict[str, type]) -> dict[str, Any]:
    return {key: types.get(key, str)(value) for key, value in row.items()}


class ResultStorage:
    """Writes per-trial CSV, per-file CSV and aggregate JSON under one directory."""

    def __init__(self, out_dir: Path | None = None) -> None:
        self.out_dir = Path(out_dir) if out_dir else SettingsLoader().resolve_path("RESULTS_DIR")
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(str(self.out_dir), str(exc)) from exc

    @property
    def trials_path(self) -> Path:
        return self.out_dir / "trials.csv"

    @property
    def files_path(self) -> Path:
        return self.out_dir / "files.csv"

    @property
    def aggregates_path(self) -> Path:
        return self.out_dir / "aggregates.json"

    def emit(
        self, results: Sequence[ScenarioResult], formats: Sequence[str] = ("csv", "json")
    ) -> list[Path]:
        written: list[Path] = []
        if "csv" in formats:
            trial_rows, file_rows = [], []
            for point, result in enumerate(results):
                prefix = {"point": point, "scenario": result.scenario}
                trial_rows += [{**prefix, **trial.row()} for trial in result.trials]
                file_rows += [{**prefix, **vars(row)} for row in result.files]
            self.write_csv(self.trials_path, POINT_FIELDS + TRIAL_FIELDS, trial_rows)
            self.write_csv(self.files_path, POINT_FIELDS + FILE_FIELDS, file_rows)
            written += [self.trials_path, self.files_path]
        if "json" in formats:
            payload = [
                {
                    "point": point,
                    "scenario": result.scenario,
                    "seed": result.seed,
                    "n": result.n,
                    "byzantine_fraction": result.byzantine_fraction,
                    "strategy": result.strategy,
                    **result.aggregates(),
                }
                for point, result in enumerate(results)
            ]
            self.atomic_write(self.aggregates_path, json.dumps(payload, indent=2) + "\n")
            written.append(self.aggregates_path)
        return written

    def write_csv(
        self, path: Path, header: Sequence[str], rows: Sequence[dict[str, Any]]
    ) -> None:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row[key] for key in header})
        self.atomic_write(path, buffer.getvalue())

    def atomic_write(self, path: Path, text: str) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with NamedTemporaryFile(
                mode="w",
                encoding="utf-8",
                delete=False,
                dir=str(path.parent),
                prefix=f"{path.name}.tmp.",
                newline="",
            ) as temp_file:
                temp_file.write(text)
                temp_path = Path(temp_file.name)
            temp_path.replace(path)
        except OSError as exc:
            raise StorageError(str(path), str(exc)) from exc

    def read_trials(self, path: Path | None = None) -> list[dict[str, Any]]:
        return self._read_csv(path or self.trials_path, _TRIAL_TYPES)

    def read_files(self, path: Path | None = None) -> list[dict[str, Any]]:
        return self._read_csv(path or self.files_path, _FILE_TYPES)

    def read_aggregates(self, path: Path | None = None) -> list[dict[str, Any]]:
        with (path or self.aggregates_path).open("r", encoding="utf-8") as file:
            return json.load(file)

    @staticmethod
    def _read_csv(path: Path, types: dict[str, type]) -> list[dict[str, Any]]:
        with path.open("r", encoding="utf-8", newline="") as file:
            return [_parse(row, types) for row in csv.DictReader(file)]

    def recompute(self, path: Path | None = None) -> list[dict[str, Any]]:
        """Aggregates per grid point, rebuilt from the per-trial CSV."""
        points: dict[int, list[dict[str, Any]]] = {}
        for row in self.read_trials(path):
            points.setdefault(row["point"], []).append(row)
        return [aggregate(rows) for _, rows in sorted(points.items())]

    def plot_data(self, csv_path: Path | None = None, out_path: Path | None = None) -> Path:
        """Whitespace-separated aggregate columns, one line per parameter combination."""
        groups: dict[tuple, list[dict[str, Any]]] = {}
        for row in self.read_trials(csv_path):
            groups.setdefault(tuple(row[key] for key in PLOT_KEYS), []).append(row)

        lines = ["# " + " ".join(PLOT_KEYS + PLOT_COLUMNS)]
        for key in sorted(groups):
            summary = aggregate(groups[key])
            cells = [str(value) for value in key]
            cells += [_cell(summary[column]) for column in PLOT_COLUMNS]
            lines.append(" ".join(cells))

        target = out_path or self.out_dir / "plot.dat"
        self.atomic_write(target, "\n".join(lines) + "\n")
        return target


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)
