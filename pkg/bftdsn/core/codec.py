"""Canonical binary encoding for everything that crosses the wire or is hashed.

Frame layout::

    version (1) | kind (1) | length (4, big-endian) | body

``kind`` is the wire id of the top-level type; ``body`` is a tag-length-value
encoding of the value. Dataclass fields are encoded in declaration order and
dict entries sorted by their encoded key, so equal values always produce equal
bytes. Fields declared with ``metadata={"wire": False}`` are left out.
"""

from __future__ import annotations

import dataclasses
import struct
from enum import IntEnum
from typing import Any, Callable, TypeVar

from bftdsn.core.exceptions import ShapeError

WIRE_VERSION = 1
FRAME_HEADER = 6

_NONE = 0x00
_BOOL = 0x01
_INT = 0x02
_BYTES = 0x03
_STR = 0x04
_SEQ = 0x05
_MAP = 0x06
_FLOAT = 0x07
_STRUCT = 0x08
_ENUM = 0x09
_SET = 0x0A

_BY_ID: dict[int, type] = {}
_BY_TYPE: dict[type, int] = {}

T = TypeVar("T")


def wire_type(type_id: int) -> Callable[[type[T]], type[T]]:
    """Register a dataclass or ``IntEnum`` under a one-byte wire id."""

    def register(cls: type[T]) -> type[T]:
        if not 0 < type_id < 256:
            raise ValueError(f"wire id out of range: {type_id}")
        existing = _BY_ID.get(type_id)
        if existing is not None and existing.__qualname__ != cls.__qualname__:
            raise ValueError(f"wire id {type_id} already taken by {existing.__name__}")
        _BY_ID[type_id] = cls
        _BY_TYPE[cls] = type_id
        return cls

    return register


def _wire_fields(cls: type) -> list[dataclasses.Field]:
    return [f for f in dataclasses.fields(cls) if f.metadata.get("wire", True)]


def _length(value: int) -> bytes:
    return value.to_bytes(4, "big")


def _encode(value: Any, out: list[bytes]) -> None:
    if value is None:
        out.append(bytes([_NONE]))
    elif isinstance(value, IntEnum):
        type_id = _BY_TYPE.get(type(value))
        if type_id is None:
            raise ShapeError(f"Тип {type(value).__name__} не зарегистрирован")
        out.append(bytes([_ENUM, type_id]))
        _encode(int(value), out)
    elif isinstance(value, bool):
        out.append(bytes([_BOOL, int(value)]))
    elif isinstance(value, int):
        size = (value.bit_length() + 8) // 8
        out.append(bytes([_INT]) + size.to_bytes(2, "big"))
        out.append(value.to_bytes(size, "big", signed=True))
    elif isinstance(value, float):
        out.append(bytes([_FLOAT]) + struct.pack(">d", value))
    elif isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        out.append(bytes([_BYTES]) + _length(len(raw)))
        out.append(raw)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(bytes([_STR]) + _length(len(raw)))
        out.append(raw)
    elif dataclasses.is_dataclass(value) and not isinstance(value, type):
        type_id = _BY_TYPE.get(type(value))
        if type_id is None:
            raise ShapeError(f"Тип {type(value).__name__} не зарегистрирован")
        fields = _wire_fields(type(value))
        out.append(bytes([_STRUCT, type_id]) + _length(len(fields)))
        for f in fields:
            _encode(getattr(value, f.name), out)
    elif isinstance(value, (tuple, list)):
        out.append(bytes([_SEQ]) + _length(len(value)))
        for item in value:
            _encode(item, out)
    elif isinstance(value, (set, frozenset)):
        items = sorted(encode_value(item) for item in value)
        out.append(bytes([_SET]) + _length(len(items)))
        out.extend(items)
    elif isinstance(value, dict):
        pairs = sorted((encode_value(k), encode_value(v)) for k, v in value.items())
        out.append(bytes([_MAP]) + _length(len(pairs)))
        for key, item in pairs:
            out.append(key)
            out.append(item)
    else:
        raise ShapeError(f"Нельзя закодировать значение типа {type(value).__name__}")


def encode_value(value: Any) -> bytes:
    out: list[bytes] = []
    _encode(value, out)
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self._raw = memoryview(raw)
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self._raw):
            raise ShapeError("Обрыв закодированных данных")
        chunk = self._raw[self.offset : end].tobytes()
        self.offset = end
        return chunk

    def byte(self) -> int:
        return self.take(1)[0]

    def length(self) -> int:
        return int.from_bytes(self.take(4), "big")

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self._raw)


def _decode(reader: _Reader) -> Any:
    tag = reader.byte()
    if tag == _NONE:
        return None
    if tag == _BOOL:
        return bool(reader.byte())
    if tag == _INT:
        size = int.from_bytes(reader.take(2), "big")
        return int.from_bytes(reader.take(size), "big", signed=True)
    if tag == _FLOAT:
        return struct.unpack(">d", reader.take(8))[0]
    if tag == _BYTES:
        return reader.take(reader.length())
    if tag == _STR:
        return reader.take(reader.length()).decode("utf-8")
    if tag == _SEQ:
        return tuple(_decode(reader) for _ in range(reader.length()))
    if tag == _SET:
        return frozenset(_decode(reader) for _ in range(reader.length()))
    if tag == _MAP:
        count = reader.length()
        result = {}
        for _ in range(count):
            key = _decode(reader)
            result[key] = _decode(reader)
        return result
    if tag == _ENUM:
        cls = _lookup(reader.byte())
        return cls(_decode(reader))
    if tag == _STRUCT:
        cls = _lookup(reader.byte())
        count = reader.length()
        fields = _wire_fields(cls)
        if count != len(fields):
            raise ShapeError(f"{cls.__name__}: ожидалось {len(fields)} полей, получено {count}")
        values = {f.name: _decode(reader) for f in fields}
        return cls(**values)
    raise ShapeError(f"Неизвестный тег {tag:#04x}")


def _lookup(type_id: int) -> type:
    cls = _BY_ID.get(type_id)
    if cls is None:
        raise ShapeError(f"Неизвестный тип {type_id}")
    return cls


def decode_value(raw: bytes) -> Any:
    reader = _Reader(raw)
    try:
        value = _decode(reader)
    except (ValueError, TypeError) as exc:
        raise ShapeError(f"Повреждённое значение: {exc}") from exc
    if not reader.exhausted:
        raise ShapeError("Лишние байты после значения")
    return value


def pack(value: Any) -> bytes:
    type_id = _BY_TYPE.get(type(value))
    if type_id is None:
        raise ShapeError(f"Тип {type(value).__name__} не зарегистрирован")
    body = encode_value(value)
    return bytes([WIRE_VERSION, type_id]) + _length(len(body)) + body


def unpack(raw: bytes) -> Any:
    if len(raw) < FRAME_HEADER:
        raise ShapeError("Кадр короче заголовка")
    version, kind = raw[0], raw[1]
    if version != WIRE_VERSION:
        raise ShapeError(f"Неподдерживаемая версия кадра {version}")
    size = int.from_bytes(raw[2:6], "big")
    if size != len(raw) - FRAME_HEADER:
        raise ShapeError("Длина кадра не совпадает с заголовком")
    value = decode_value(raw[FRAME_HEADER:])
    if _BY_TYPE.get(type(value)) != kind:
        raise ShapeError("Тип содержимого не совпадает с заголовком кадра")
    return value
