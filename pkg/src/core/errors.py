# src/core/errors.py

from typing import Optional


class FastFlowError(Exception):
    """Базовое исключение проекта."""


class ConfigError(FastFlowError, ValueError):
    """Невалидный или отсутствующий конфиг. Сообщение называет поле."""


class TraceParseError(FastFlowError, ValueError):
    """
    Ошибка разбора строки trace-файла.

    :param line_no: номер строки (с 1)
    :param field: имя поля, которое не прошло проверку (если известно)
    """

    def __init__(self, line_no: int, field: Optional[str], message: str):
        self.line_no = line_no
        self.field = field
        where = f"line {line_no}" + (f", field '{field}'" if field else "")
        super().__init__(f"{where}: {message}")


class RepresentationError(FastFlowError, ValueError):
    pass


class ModelFormatError(FastFlowError, ValueError):
    pass


class ClassSetMismatchError(FastFlowError, ValueError):
    pass


class CalibrationError(FastFlowError, ValueError):
    pass


class DatasetError(FastFlowError, ValueError):
    pass
