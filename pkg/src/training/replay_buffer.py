# src/training/replay_buffer.py

"""
Буфер воспроизведения с приоритетами: кольцевой буфер фиксированной ёмкости
(вытесняется самый старый переход), выборка ∝ priority^α, веса важности
(N·P(i))^(−β), нормированные на максимум в батче.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class Transition:
    """
    Состояние - префикс потока (flow_id, prefix_len с 1); next_state - префикс
    на один шаг длиннее, если terminal=False.
    """
    flow_id: int
    prefix_len: int
    action: int
    reward: float
    terminal: bool
    granularity: Optional[str] = None

    @property
    def next_prefix_len(self) -> Optional[int]:
        return None if self.terminal else self.prefix_len + 1


class ReplayBuffer:
    def __init__(self, capacity: int, priority_exponent: float = 0.6, priority_floor: float = 1e-6):
        if capacity < 1:
            raise ValueError("replay capacity must be ≥ 1")
        self.capacity = capacity
        self.alpha = priority_exponent
        self.floor = priority_floor
        self._items: List[Optional[Transition]] = [None] * capacity
        self._priorities = np.zeros(capacity, dtype=np.float64)
        self._next = 0
        self._size = 0
        self._max_priority = 1.0

    def __len__(self) -> int:
        return self._size

    @property
    def priorities(self) -> np.ndarray:
        return self._priorities[:self._size].copy()

    def _slot_order(self) -> np.ndarray:
        """Индексы слотов от самого старого к самому новому."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def transitions(self) -> List[Transition]:
        return [self._items[i] for i in self._slot_order()]

    def push(self, transition: Transition, priority: Optional[float] = None) -> None:
        """Новый переход получает текущий максимальный приоритет, если явно не задан."""
        p = self._max_priority if priority is None else max(float(priority), self.floor)
        self._items[self._next] = transition
        self._priorities[self._next] = p
        self._max_priority = max(self._max_priority, p)
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, transitions) -> None:
        for t in transitions:
            self.push(t)

    def probabilities(self) -> np.ndarray:
        scaled = self._priorities[:self._size] ** self.alpha
        return scaled / scaled.sum()

    def sample(self, batch_size: int, rng: np.random.Generator,
               importance_exponent: float = 0.4) -> Tuple[List[Transition], np.ndarray, np.ndarray]:
        """Выборка с возвращением. Возвращает (переходы, веса важности, индексы слотов)."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        probs = self.probabilities()
        idx = rng.choice(self._size, size=batch_size, replace=True, p=probs)
        weights = (self._size * probs[idx]) ** (-importance_exponent)
        weights = weights / weights.max()
        return [self._items[i] for i in idx], weights, idx

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray) -> None:
        new = np.maximum(np.abs(np.asarray(td_errors, dtype=np.float64)), self.floor)
        for i, p in zip(indices, new):
            self._priorities[int(i)] = p
        if len(new):
            self._max_priority = max(self._max_priority, float(new.max()))


def priority_sample(replay: ReplayBuffer, batch_size: int, rng: np.random.Generator,
                    importance_exponent: float = 0.4) -> Tuple[List[Transition], np.ndarray]:
    batch, weights, _ = replay.sample(batch_size, rng, importance_exponent)
    return batch, weights
