# src/core/log.py

import logging
import os

from dotenv import load_dotenv

load_dotenv()

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _level_from_env() -> int:
    name = os.getenv("FASTFLOW_LOG", "INFO").upper()
    level = logging.getLevelName(name)
    # getLevelName возвращает строку "Level X" для неизвестных имён
    return level if isinstance(level, int) else logging.INFO


def get_logger(name: str) -> logging.Logger:
    """
    Возвращает логгер модуля с одним консольным обработчиком.
    Уровень берётся из переменной окружения FASTFLOW_LOG (по умолчанию INFO).
    """
    logger = logging.getLogger(name)
    logger.setLevel(_level_from_env())
    if not logger.handlers:
        ch = logging.StreamHandler()
        ch.setFormatter(logging.Formatter(_FORMAT))
        logger.addHandler(ch)
        logger.propagate = False
    return logger
