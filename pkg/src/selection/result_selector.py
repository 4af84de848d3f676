# src/selection/result_selector.py

"""
Выбор итогового результата потока из выдач пакетного и слотового классификаторов.

Одиночная выдача буферизуется, пока не придёт выдача второго источника или
не пройдёт delta_select потокового времени (по времени следующего входа):
  - одиночная выдача принимается, если её уверенность > порога своего источника;
  - две выдачи ближе delta_select сравниваются: побеждает более уверенная
    (при равенстве пакетная), и принимается, если прошла свой порог.
    Совпадающие метки дают source="agreed" и бонус к уверенности (не выше 1.0).
После выбора машина больше не меняет результат.
"""

from dataclasses import asdict, dataclass
from typing import Literal, Optional

from src.config.settings import SelectionConfig
from src.core.log import get_logger

logger = get_logger(__name__)

Source = Literal["packet", "slot"]

# допуск на ошибку округления разности времён: 0.06 - 0.01 < 0.05 в float
WINDOW_EPS = 1e-9


@dataclass(frozen=True)
class ResultEvent:
    source: Source
    label: str
    confidence: float
    flow_time: float
    packets_seen: int = 0


@dataclass(frozen=True)
class SelectedResult:
    label: str
    confidence: float
    source: str  # packet | slot | agreed
    decided_at: float
    packets_consumed: int

    def to_dict(self) -> dict:
        return asdict(self)


class SelectionMachine:
    def __init__(self, cfg: SelectionConfig):
        self.cfg = cfg
        self.pending: Optional[ResultEvent] = None
        self.selected: Optional[SelectedResult] = None

    def _threshold(self, source: str) -> float:
        return self.cfg.t_p if source == "packet" else self.cfg.t_t

    def _expired(self, buffered: ResultEvent, now: float) -> bool:
        return now - buffered.flow_time >= self.cfg.delta_select - WINDOW_EPS

    def _lone(self, ev: ResultEvent) -> Optional[SelectedResult]:
        if ev.confidence > self._threshold(ev.source):
            self.selected = SelectedResult(ev.label, ev.confidence, ev.source, ev.flow_time, ev.packets_seen)
            logger.debug(f"[Selector] Lone {ev.source} result selected: {ev.label} ({ev.confidence:.3f})")
        return self.selected

    def _pair(self, a: ResultEvent, b: ResultEvent) -> Optional[SelectedResult]:
        packet, slot = (a, b) if a.source == "packet" else (b, a)
        winner = packet if packet.confidence >= slot.confidence else slot
        if winner.confidence <= self._threshold(winner.source):
            logger.debug(f"[Selector] Pair below threshold: {packet.label}/{packet.confidence:.3f} "
                         f"vs {slot.label}/{slot.confidence:.3f}")
            return None
        decided_at = max(a.flow_time, b.flow_time)
        packets = max(a.packets_seen, b.packets_seen)
        if packet.label == slot.label:
            conf = min(1.0, winner.confidence + self.cfg.agreement_bonus)
            self.selected = SelectedResult(winner.label, conf, "agreed", decided_at, packets)
        else:
            self.selected = SelectedResult(winner.label, winner.confidence, winner.source, decided_at, packets)
        logger.debug(f"[Selector] Pair resolved: {self.selected}")
        return self.selected

    def advance(self, now: float) -> Optional[SelectedResult]:
        """Сбрасывает буферизованную выдачу, если к моменту now окно delta_select истекло."""
        if self.selected is None and self.pending is not None and self._expired(self.pending, now):
            buffered, self.pending = self.pending, None
            self._lone(buffered)
        return self.selected

    def on_event(self, ev: ResultEvent) -> Optional[SelectedResult]:
        """None - решение ещё не принято."""
        if self.selected is not None:
            return self.selected
        if self.advance(ev.flow_time) is not None:
            return self.selected
        if self.pending is None:
            self.pending = ev
            return None
        buffered, self.pending = self.pending, None
        if buffered.source == ev.source:
            if self._lone(buffered) is not None:
                return self.selected
            self.pending = ev
            return None
        return self._pair(buffered, ev)

    def finish(self) -> Optional[SelectedResult]:
        """Конец потока: оставшаяся одиночная выдача проверяется без ожидания пары."""
        if self.selected is None and self.pending is not None:
            buffered, self.pending = self.pending, None
            self._lone(buffered)
        return self.selected


def on_event(machine: SelectionMachine, ev: ResultEvent) -> Optional[SelectedResult]:
    return machine.on_event(ev)
