# src/models/decider.py

"""
Динамический вывод: после каждого шага классификатор либо выдаёт метку,
либо ждёт следующую точку данных. Индекс k (последний выход) - «unknown»/wait.
"""

from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from src.config.settings import DeciderConfig
from src.ingest.trace_reader import UNKNOWN_LABEL
from src.models.base_classifier import BaseFlowClassifier


def soft_confidence(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


@dataclass(frozen=True)
class Decision:
    emit: bool
    index: int          # индекс выбранного класса; k для unknown/wait
    confidence: float   # conf[index] при emit, conf[k] при wait


def decide(conf: np.ndarray, t: int, cfg: DeciderConfig) -> Decision:
    if t < 1:
        raise ValueError("timestep must be ≥ 1")
    k = len(conf) - 1
    p_unknown = float(conf[k])
    if t >= cfg.c_unk:
        return Decision(emit=True, index=k, confidence=p_unknown)
    best = int(np.argmax(conf))  # при равенстве - меньший индекс
    if p_unknown >= cfg.t_unk or best == k:
        return Decision(emit=False, index=k, confidence=p_unknown)
    return Decision(emit=True, index=best, confidence=float(conf[best]))


@dataclass(frozen=True)
class ClassificationResult:
    label: str
    confidence: float
    steps_used: int
    elapsed: float
    final: bool
    index: int = -1

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN_LABEL


class ClassifierSession:
    """
    Возобновляемая классификация одного потока: push() получает по одной точке
    данных (признаки пакета или закрытого слота) и время потока, к которому она
    относится. После финального результата новые точки игнорируются.
    """

    def __init__(self, model: BaseFlowClassifier, cfg: DeciderConfig):
        self.model = model
        self.cfg = cfg
        self.state: Any = model.initial_state()
        self.steps = 0
        self.result: Optional[ClassificationResult] = None
        self.last_confidence: Optional[np.ndarray] = None

    @property
    def done(self) -> bool:
        return self.result is not None and self.result.final

    def push(self, x: np.ndarray, flow_time: float) -> ClassificationResult:
        if self.done:
            return self.result
        self.state, scores = self.model.step(self.state, x)
        self.steps += 1
        conf = soft_confidence(scores)
        self.last_confidence = conf
        if len(conf) != len(self.model.class_names) + 1:
            raise ValueError(
                f"decider needs k+1 outputs, model has {len(conf)} for {len(self.model.class_names)} classes"
            )
        d = decide(conf, self.steps, self.cfg)
        self.result = ClassificationResult(
            label=self.model.label_of(d.index),
            confidence=d.confidence,
            steps_used=self.steps,
            elapsed=float(flow_time),
            final=d.emit,
            index=d.index,
        )
        return self.result


def classify_sequence(model: BaseFlowClassifier, seq, cfg: DeciderConfig,
                      times: Optional[Sequence[float]] = None) -> ClassificationResult:
    """
    Пошаговый вывод по готовой последовательности (PacketSequence,
    SlotSequence или матрица признаков). Останавливается на первом emit.
    Если последовательность кончилась раньше, результат не финальный.

    :param times: время потока для каждого шага; по умолчанию seq.times()
    """
    features = seq.to_array() if hasattr(seq, "to_array") else np.asarray(seq, dtype=np.float64)
    if len(features) == 0:
        raise ValueError("cannot classify an empty sequence")
    if times is None:
        times = seq.times() if hasattr(seq, "times") else np.zeros(len(features))
    session = ClassifierSession(model, cfg)
    result = None
    for x, t in zip(features, times):
        result = session.push(x, float(t))
        if result.final:
            break
    return result
