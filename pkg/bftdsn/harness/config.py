from __future__ import annotations

import dataclasses
import tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from bftdsn.core.exceptions import ScenarioError
from bftdsn.infra.settings import SettingsLoader
from bftdsn.sim.adversary import AdversaryConfig

_ALIASES = {"byz_fraction": "byzantine_fraction"}


def _is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


@dataclass(frozen=True)
class NetworkSpec:
    n: int = 10
    sectors_per_node: float = 2.0
    security_bits: int = 128
    delta_ms: float = 10.0
    gst_ms: float = 0.0
    bandwidth_bytes_per_ms: float = 1_000_000.0
    drop_probability: float = 0.0
    sector_size: int = 1_048_576
    fragment_size: int = 256

    def __post_init__(self) -> None:
        if self.n < 4:
            raise ScenarioError(f"n={self.n}, нужно не меньше 4 секторов")
        if self.sectors_per_node <= 0:
            raise ScenarioError("sectors_per_node должно быть положительным")
        if self.delta_ms <= 0:
            raise ScenarioError("delta_ms должно быть положительным")
        if self.gst_ms < 0:
            raise ScenarioError("gst_ms не может быть отрицательным")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ScenarioError("drop_probability должна быть в [0, 1)")
        if not _is_power_of_two(self.fragment_size):
            raise ScenarioError("fragment_size должен быть степенью двойки")
        if not _is_power_of_two(self.sector_size) or self.sector_size < self.fragment_size:
            raise ScenarioError("sector_size должен быть степенью двойки не меньше fragment_size")


@dataclass(frozen=True)
class WorkloadSpec:
    files: int = 20
    file_size: int = 1_048_576
    clients: int = 1
    retrieve: bool = True

    def __post_init__(self) -> None:
        if self.files < 0:
            raise ScenarioError("files не может быть отрицательным")
        if self.file_size <= 0:
            raise ScenarioError("file_size должен быть положительным")
        if self.clients < 1:
            raise ScenarioError("нужен хотя бы один клиент")


@dataclass(frozen=True)
class ConsensusSpec:
    block_interval_ms: float = 20.0
    pos_interval: int = 3
    pos_grace: int = 10
    key_epoch: int = 50
    file_ttl: int = 0
    max_block_txs: int = 256
    mempool_ttl: int = 40
    min_heights: int = 0
    op_timeout_ms: float = 120_000.0
    persist_chain: bool = False

    def __post_init__(self) -> None:
        if self.block_interval_ms < 0:
            raise ScenarioError("block_interval_ms не может быть отрицательным")
        if self.pos_interval < 1 or self.pos_grace < self.pos_interval:
            raise ScenarioError("нужно 1 <= pos_interval <= pos_grace")
        if self.op_timeout_ms <= 0:
            raise ScenarioError("op_timeout_ms должно быть положительным")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "default"
    seed: int = 7
    trials: int = 1
    network: NetworkSpec = field(default_factory=NetworkSpec)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    consensus: ConsensusSpec = field(default_factory=ConsensusSpec)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ScenarioError("trials должно быть не меньше 1")

    @property
    def n(self) -> int:
        return self.network.n

    @classmethod
    def from_settings(cls, **overrides: Any) -> "ScenarioConfig":
        settings = SettingsLoader()
        scenario = cls(
            seed=settings.get_int("SEED"),
            trials=settings.get_int("TRIALS"),
            network=NetworkSpec(
                security_bits=settings.get_int("SECURITY_BITS"),
                delta_ms=float(settings.get("DELTA_MS")),
                gst_ms=float(settings.get("GST_MS")),
                bandwidth_bytes_per_ms=float(settings.get("BANDWIDTH_BYTES_PER_MS")),
                sector_size=settings.get_int("SECTOR_SIZE"),
                fragment_size=settings.get_int("FRAGMENT_SIZE"),
            ),
            consensus=ConsensusSpec(
                block_interval_ms=float(settings.get("BLOCK_INTERVAL_MS")),
                pos_interval=settings.get_int("POS_INTERVAL_HEIGHTS"),
                pos_grace=settings.get_int("POS_GRACE_HEIGHTS"),
                key_epoch=settings.get_int("KEY_EPOCH_HEIGHTS"),
                file_ttl=settings.get_int("FILE_TTL_HEIGHTS"),
                max_block_txs=settings.get_int("MAX_BLOCK_TXS"),
                mempool_ttl=settings.get_int("MEMPOOL_TTL_HEIGHTS"),
            ),
        )
        return scenario.with_overrides(**overrides)

    @classmethod
    def from_file(cls, path: Path) -> "ScenarioConfig":
        """Read a TOML scenario on top of the settings defaults.

        Tables: ``[scenario]`` (name, seed, trials), ``[network]``,
        ``[adversary]``, ``[workload]``, ``[consensus]``.
        """
        try:
            with Path(path).open("rb") as file:
                raw = tomllib.load(file)
        except FileNotFoundError as exc:
            raise ScenarioError(f"файл {path} не найден") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc

        base = cls.from_settings()
        unknown = set(raw) - {"scenario", *_SECTIONS}
        if unknown:
            raise ScenarioError(f"неизвестные таблицы: {', '.join(sorted(unknown))}")

        top = _coerce_table(base, raw.get("scenario", {}), "scenario", skip=set(_SECTIONS))
        sections = {}
        for name in _SECTIONS:
            current = getattr(base, name)
            values = _coerce_table(current, raw.get(name, {}), name, skip={"seed"})
            sections[name] = replace(current, **values)
        return replace(base, **top, **sections)

    def with_overrides(self, **overrides: Any) -> "ScenarioConfig":
        """Flat overrides (``n=22``, ``strategy="drop-chunk"``) routed to their table."""
        top: dict[str, Any] = {}
        nested: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
        for key, value in overrides.items():
            if value is None:
                continue
            key = _ALIASES.get(key, key)
            if key in ("name", "seed", "trials"):
                top[key] = value
                continue
            for section in _SECTIONS:
                if key in _field_names(getattr(self, section)):
                    nested[section][key] = value
                    break
            else:
                raise ScenarioError(f"неизвестный параметр '{key}'")
        sections = {
            name: replace(getattr(self, name), **values)
            for name, values in nested.items()
            if values
        }
        return replace(self, **top, **sections)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS = ("network", "adversary", "workload", "consensus")


def _field_names(instance: Any) -> set[str]:
    return {item.name for item in fields(instance)}


def _coerce_table(
    instance: Any, table: dict[str, Any], section: str, skip: set[str]
) -> dict[str, Any]:
    if not isinstance(table, dict):
        raise ScenarioError(f"[{section}] должна быть таблицей")
    known = {item.name: item for item in fields(instance)}
    values: dict[str, Any] = {}
    for key, value in table.items():
        if key not in known or key in skip:
            raise ScenarioError(f"неизвестный ключ '{key}' в [{section}]")
        current = getattr(instance, key)
        values[key] = _coerce(current, value, f"{section}.{key}")
    return values


def _coerce(current: Any, value: Any, where: str) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ScenarioError(f"{where} должно быть true или false")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"{where} должно быть целым числом")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{where} должно быть числом")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ScenarioError(f"{where} должно быть строкой")
        return value
    return value
