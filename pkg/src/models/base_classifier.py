# src/models/base_classifier.py

from abc import ABC, abstractmethod
from typing import Any, List, Tuple

import numpy as np

from src.ingest.trace_reader import UNKNOWN_LABEL


class BaseFlowClassifier(ABC):
    """
    Абстрактный пошаговый классификатор потока.
    Определяет интерфейс, который использует решатель «выдать или ждать» и потоковый
    конвейер: начальное состояние + один шаг на каждую новую точку данных.
    Выход - вектор оценок длины k+1, индекс k зарезервирован под "unknown".
    """

    @property
    @abstractmethod
    def class_names(self) -> List[str]:
        """
        Имена k известных классов, по порядку индексов.
        """
        pass

    @property
    @abstractmethod
    def input_dim(self) -> int:
        pass

    @abstractmethod
    def initial_state(self) -> Any:
        """
        Состояние в начале потока.
        """
        pass

    @abstractmethod
    def step(self, state: Any, x: np.ndarray) -> Tuple[Any, np.ndarray]:
        """
        Обрабатывает одну точку данных, возвращает (новое состояние, оценки k+1 классов).
        """
        pass

    @property
    def unknown_index(self) -> int:
        return len(self.class_names)

    def label_of(self, index: int) -> str:
        return UNKNOWN_LABEL if index == self.unknown_index else self.class_names[index]
