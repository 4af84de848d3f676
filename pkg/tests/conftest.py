# tests/conftest.py

import os
from typing import List, Sequence, Tuple

import numpy as np
import pytest

from src.ingest.trace_reader import Direction, FiveTuple, FlowTrace, PacketRecord, normalize_flow
from src.models.base_classifier import BaseFlowClassifier


def pytest_collection_modifyitems(config, items):
    # долгие сквозные прогоны обучения - только по FASTFLOW_SLOW=1
    if os.getenv("FASTFLOW_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow: set FASTFLOW_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


KEY_TCP = FiveTuple("10.0.0.1", "1.2.3.4", 5000, 443, "tcp")
KEY_UDP = FiveTuple("10.0.0.1", "1.2.3.4", 5000, 3478, "udp")


def make_flow(packets: Sequence[Tuple], proto: str = "tcp", label=None) -> FlowTrace:
    """
    Поток из кортежей (ts, "up"|"down", plen[, syn, ack]).
    """
    key = KEY_TCP if proto == "tcp" else KEY_UDP
    recs = []
    for p in packets:
        ts, d, plen = p[0], p[1], p[2]
        syn = p[3] if len(p) > 3 else False
        ack = p[4] if len(p) > 4 else False
        recs.append(PacketRecord(float(ts), key, Direction(d), int(plen), proto, syn, ack))
    return normalize_flow(recs, key, label=label)


def random_flow(rng: np.random.Generator, n: int = None, proto: str = None, label=None) -> FlowTrace:
    n = int(rng.integers(5, 201)) if n is None else n
    proto = proto or ("tcp" if rng.random() < 0.5 else "udp")
    ts = np.concatenate([[0.0], np.cumsum(rng.exponential(0.01, n - 1))])
    packets = [(0.0, "up", int(rng.integers(0, 1501)))]
    for t in ts[1:]:
        packets.append((float(t), "up" if rng.random() < 0.5 else "down", int(rng.integers(0, 1501))))
    return make_flow(packets, proto, label)


def conf_scores(conf: Sequence[float]) -> np.ndarray:
    """Оценки, softmax которых равен conf."""
    return np.log(np.maximum(np.asarray(conf, dtype=np.float64), 1e-300))


class ScriptedClassifier(BaseFlowClassifier):
    """
    Классификатор, выдающий заранее заданные векторы уверенности по шагам
    (последний вектор повторяется). Состояние - номер шага.
    """

    def __init__(self, class_names: List[str], confs: Sequence[Sequence[float]], input_dim: int = 3):
        self._class_names = list(class_names)
        self._scores = [conf_scores(c) for c in confs]
        self._input_dim = input_dim
        self.calls = 0

    @property
    def class_names(self) -> List[str]:
        return self._class_names

    @property
    def input_dim(self) -> int:
        return self._input_dim

    def initial_state(self):
        return 0

    def step(self, state, x):
        self.calls += 1
        return state + 1, self._scores[min(state, len(self._scores) - 1)]


class SizeCodedClassifier(BaseFlowClassifier):
    """
    «Всегда правый» классификатор для тестов оценки: класс потока закодирован
    размером первого пакета (класс i ↔ plen = CODE_SIZES[i]) и читается из
    признака feature_index первого шага (size для пакетов, mean_light_up для слотов).
    До шага answer_at ждёт; say_unknown=True делает его «всегда unknown».
    """

    def __init__(self, class_names: List[str], feature_index: int = 1, answer_at: int = 1,
                 confidence: float = 0.97, say_unknown: bool = False, input_dim: int = 3, mtu: int = 1500):
        self._class_names = list(class_names)
        self.feature_index = feature_index
        self.answer_at = answer_at
        self.confidence = confidence
        self.say_unknown = say_unknown
        self._input_dim = input_dim
        self.mtu = mtu

    @property
    def class_names(self) -> List[str]:
        return self._class_names

    @property
    def input_dim(self) -> int:
        return self._input_dim

    def initial_state(self):
        return (0, None)

    def step(self, state, x):
        t, first = state
        first = x if first is None else first
        k = len(self._class_names)
        if t + 1 < self.answer_at or self.say_unknown:
            conf = np.full(k + 1, (1.0 - self.confidence) / k)
            conf[k] = self.confidence
        else:
            plen = int(round(first[self.feature_index] * self.mtu))
            conf = np.full(k + 1, (1.0 - self.confidence) / k)
            conf[CODE_SIZES.index(plen)] = self.confidence
        return (t + 1, first), conf_scores(conf)


CODE_SIZES = [100, 200, 300, 400, 500]


def coded_flow(class_index: int, label: str, n: int = 12, gap: float = 0.06, proto: str = "udp") -> FlowTrace:
    """Поток, у которого первый пакет несёт код класса и один лежит в первом слоте."""
    packets = [(0.0, "up", CODE_SIZES[class_index])]
    for i in range(1, n):
        packets.append((gap * i, "down" if i % 2 else "up", 700))
    return make_flow(packets, proto, label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
