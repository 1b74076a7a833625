from __future__ import annotations


class DsnError(Exception):
    """Base exception for domain-specific errors."""


class FieldError(DsnError):
    """Finite-field domain or capacity violation."""


class ShapeError(DsnError):
    """Inputs with the wrong count or length."""


class CodingError(DsnError):
    """Erasure-decoding failure."""


class InsufficientChunksError(CodingError):
    def __init__(self, available: int, required: int) -> None:
        super().__init__(
            f"Недостаточно фрагментов: доступно {available}, требуется {required}"
        )
        self.available = available
        self.required = required


class DecodeFailureError(CodingError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"Ошибка декодирования: {reason}")


class ParameterError(DsnError):
    """Inconsistent protocol or primitive parameters."""


class SignatureError(DsnError):
    """Weighted threshold signature misuse."""


class UnsupportedSecurityLevelError(SignatureError):
    def __init__(self, bits: int) -> None:
        super().__init__(f"Неподдерживаемый уровень безопасности: {bits} бит")


class WeightVectorError(SignatureError):
    def __init__(self, expected: int, actual: int) -> None:
        super().__init__(
            f"Длина вектора весов {actual} не совпадает с числом майнеров {expected}"
        )


class InvalidPartialError(SignatureError):
    def __init__(self, signer: int, reason: str = "неверная подпись") -> None:
        super().__init__(f"Частичная подпись майнера {signer} отклонена: {reason}")
        self.signer = signer


class ProofError(DsnError):
    """Merkle tree or proof-of-storage misuse."""


class TreeAlignmentError(ProofError):
    def __init__(self, size: int, fragment_size: int) -> None:
        super().__init__(
            f"Размер сектора {size} не кратен фрагменту {fragment_size} "
            "или число фрагментов не степень двойки"
        )


class LeafIndexError(ProofError):
    def __init__(self, index: int, leaf_count: int) -> None:
        super().__init__(f"Лист {index} вне диапазона [0, {leaf_count})")


class OutOfBoundsWriteError(ProofError):
    def __init__(self, offset: int, length: int, size: int) -> None:
        super().__init__(
            f"Запись [{offset}, {offset + length}) выходит за границы сектора {size}"
        )


class LedgerError(DsnError):
    """Ledger state machine misuse."""


class FutureHeightError(LedgerError):
    def __init__(self, height: int, committed: int) -> None:
        super().__init__(
            f"Высота {height} ещё не зафиксирована (текущая {committed})"
        )


class InvalidCertificateError(LedgerError):
    def __init__(self, height: int, reason: str) -> None:
        super().__init__(f"Сертификат блока {height} отклонён: {reason}")


class InvalidBlockError(LedgerError):
    def __init__(self, height: int, reason: str) -> None:
        super().__init__(f"Блок {height} отклонён: {reason}")
        self.reason = reason


class ConsensusError(DsnError):
    """SW-BFT input errors."""


class EmptyWeightTableError(ConsensusError):
    def __init__(self) -> None:
        super().__init__("Таблица весов пуста")


class UnknownVoterError(ConsensusError):
    def __init__(self, voter: int) -> None:
        super().__init__(f"Неизвестный голосующий {voter}")


class InvalidVoteSignatureError(ConsensusError):
    def __init__(self, voter: int) -> None:
        super().__init__(f"Неверная подпись голоса майнера {voter}")


class NetworkError(DsnError):
    """Simulated network errors."""


class UnknownNodeError(NetworkError):
    def __init__(self, node: int) -> None:
        super().__init__(f"Узел {node} не зарегистрирован")


class LivenessViolationError(NetworkError):
    def __init__(self, cap_ms: float, reason: str = "") -> None:
        detail = f": {reason}" if reason else ""
        super().__init__(f"Превышен лимит времени {cap_ms:.1f} мс{detail}")
        self.cap_ms = cap_ms


class ProtocolError(DsnError):
    """Put/get flow errors."""


class EmptyFileError(ProtocolError):
    def __init__(self) -> None:
        super().__init__("Файл не может быть пустым")


class FileNotFoundOnChainError(ProtocolError):
    def __init__(self, file_id: str) -> None:
        super().__init__(f"Файл {file_id} не найден или срок хранения истёк")


class InsufficientSectorsError(ProtocolError):
    def __init__(self, n: int) -> None:
        super().__init__(f"Для n={n} не допускается ни одного сбоя (нужно n >= 4)")


class ScenarioError(DsnError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"Неверный сценарий: {reason}")


class StorageError(DsnError):
    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"Не удалось записать {path}: {reason}")
