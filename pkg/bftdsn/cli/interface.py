from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Sequence

from prettytable import PrettyTable

from bftdsn.core.exceptions import DsnError
from bftdsn.harness.config import ScenarioConfig
from bftdsn.harness.runner import ScenarioResult
from bftdsn.harness.service import HarnessService
from bftdsn.sim.adversary import STRATEGIES

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2

# flag -> (ScenarioConfig override, value parser)
_OVERRIDES = {
    "seed": ("seed", int),
    "n": ("n", int),
    "byz-fraction": ("byzantine_fraction", float),
    "strategy": ("strategy", str),
    "file-size": ("file_size", int),
    "files": ("files", int),
    "trials": ("trials", int),
    "gst": ("gst_ms", float),
    "delta": ("delta_ms", float),
}
_FORMATS = ("csv", "json")


def _parse_named_args(tokens: list[str]) -> dict[str, str]:
    args: dict[str, str] = {}
    i = 0

    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ValueError(f"Неожиданный аргумент: {token}")

        key = token[2:]
        if not key:
            raise ValueError("Пустое имя аргумента")
        if i + 1 >= len(tokens):
            raise ValueError(f"Для аргумента '{token}' не указано значение")

        args[key] = tokens[i + 1]
        i += 2

    return args


def print_help() -> None:
    print(
        "\n".join(
            [
                "Команды:",
                "  run [--scenario <path>] [--seed <int>] [--n <int>] [--byz-fraction <float>]",
                "      [--strategy <str>] [--file-size <bytes>] [--files <int>] [--trials <int>]",
                "      [--out <dir>] [--format csv|json] [--workers <int>]",
                "  sweep <те же флаги; значения через запятую задают сетку>",
                "  plot-data --in <trials.csv> [--out <path>]",
                "  experiment --kind pos|pos-honest|tries|storage [--scenario <path>] ...",
                "  help",
                f"Стратегии: {', '.join(STRATEGIES)}",
            ]
        )
    )


def _base_scenario(options: dict[str, str]) -> ScenarioConfig:
    if "scenario" in options:
        return ScenarioConfig.from_file(Path(options["scenario"]))
    return ScenarioConfig.from_settings()


def _overrides(options: dict[str, str]) -> dict[str, Any]:
    return {
        name: parse(options[flag])
        for flag, (name, parse) in _OVERRIDES.items()
        if flag in options
    }


def _grid(options: dict[str, str]) -> dict[str, list[Any]]:
    grid: dict[str, list[Any]] = {}
    for flag, (name, parse) in _OVERRIDES.items():
        if flag in options and flag != "trials":
            grid[name] = [parse(item) for item in options[flag].split(",") if item]
    return grid


def _formats(options: dict[str, str]) -> tuple[str, ...]:
    if "format" not in options:
        return _FORMATS
    fmt = options["format"].lower()
    if fmt not in _FORMATS:
        raise ValueError(f"Неизвестный формат '{fmt}', допустимы: csv, json")
    return (fmt,)


def _results_table(results: Sequence[ScenarioResult]) -> PrettyTable:
    table = PrettyTable()
    table.field_names = [
        "n",
        "byz",
        "strategy",
        "trials",
        "success",
        "tries",
        "ratio",
        "put ms",
        "get ms",
        "safety",
        "liveness",
    ]
    for result in results:
        summary = result.aggregates()
        table.add_row(
            [
                result.n,
                f"{result.byzantine_fraction:.2f}",
                result.strategy,
                summary["trials"],
                f"{summary['success_rate']:.3f}",
                f"{summary['mean_tries']:.2f}",
                f"{summary['storage_ratio']:.4f}",
                f"{summary['mean_put_latency_ms']:.1f}",
                f"{summary['mean_get_latency_ms']:.1f}",
                summary["safety_violations"],
                summary["liveness_failures"],
            ]
        )
    return table


def _report(
    service: HarnessService,
    results: list[ScenarioResult],
    options: dict[str, str],
    formats: tuple[str, ...],
) -> int:
    print(_results_table(results))
    out_dir = Path(options["out"]) if "out" in options else None
    for path in service.emit(results, out_dir, formats):
        print(f"Записано: {path}")
    if any(result.violated for result in results):
        print("Нарушены инварианты безопасности или живучести, см. logs/sim.log")
        return EXIT_VIOLATION
    return EXIT_OK


def _dispatch(command: str, options: dict[str, str]) -> int:
    service = HarnessService(workers=int(options.get("workers", 1)))

    if command == "run":
        formats = _formats(options)
        scenario = _base_scenario(options).with_overrides(**_overrides(options))
        return _report(service, [service.run(scenario)], options, formats)

    if command == "sweep":
        formats = _formats(options)
        base = _base_scenario(options)
        if "trials" in options:
            base = base.with_overrides(trials=int(options["trials"]))
        grid = _grid(options) or {"n": [base.n]}
        return _report(service, service.sweep(base, grid), options, formats)

    if command == "plot-data":
        target = service.plot_data(
            Path(options["in"]), Path(options["out"]) if "out" in options else None
        )
        print(f"Записано: {target}")
        return EXIT_OK

    if command == "experiment":
        scenario = _base_scenario(options).with_overrides(**_overrides(options))
        print(service.experiment(options["kind"], scenario))
        return EXIT_OK

    print("Неизвестная команда. Введите 'help'.")
    return EXIT_ERROR


def run_cli(argv: Sequence[str] | None = None) -> int:
    tokens = list(sys.argv[1:] if argv is None else argv)
    if not tokens or tokens[0] in {"help", "--help", "-h"}:
        print_help()
        return EXIT_OK

    command = tokens[0].lower()
    try:
        return _dispatch(command, _parse_named_args(tokens[1:]))
    except KeyError as exc:
        print(f"Отсутствует обязательный аргумент: --{exc.args[0]}")
    except DsnError as exc:
        print(str(exc))
    except ValueError as exc:
        print(str(exc))
    return EXIT_ERROR
