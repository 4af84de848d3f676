# src/selection/flow_runner.py

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

from src.config.settings import DeciderConfig, RunConfig, SelectionConfig, TraceConfig
from src.core.errors import ClassSetMismatchError
from src.core.log import get_logger
from src.features.representation import SlotStream, packet_feature
from src.ingest.trace_reader import UNKNOWN_LABEL, Direction, FiveTuple, FlowTrace, PacketRecord
from src.models.base_classifier import BaseFlowClassifier
from src.models.decider import ClassificationResult, ClassifierSession
from src.selection.result_selector import ResultEvent, SelectedResult, SelectionMachine

logger = get_logger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    packet_decider: DeciderConfig = DeciderConfig()
    slot_decider: DeciderConfig = DeciderConfig()
    selection: SelectionConfig = SelectionConfig()
    trace: TraceConfig = TraceConfig()

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "PipelineConfig":
        return cls(cfg.packet_decider, cfg.slot_decider, cfg.selection, cfg.trace)


def check_class_sets(packet_model: Optional[BaseFlowClassifier], slot_model: Optional[BaseFlowClassifier]) -> None:
    if packet_model is None and slot_model is None:
        raise ValueError("at least one of packet_model / slot_model is required")
    if packet_model is not None and slot_model is not None \
            and list(packet_model.class_names) != list(slot_model.class_names):
        raise ClassSetMismatchError(
            f"class-set mismatch: packet model {packet_model.class_names} vs slot model {slot_model.class_names}"
        )


class FlowSession:
    """
    Живой поток: пакетный классификатор шагает на каждом пакете, слотовый - на
    каждой закрытой границе слота (граница обрабатывается раньше пакета,
    пришедшего в тот же момент). Без одной из моделей работает только другой путь.
    """

    def __init__(self, packet_model: Optional[BaseFlowClassifier], slot_model: Optional[BaseFlowClassifier],
                 cfg: PipelineConfig = PipelineConfig()):
        check_class_sets(packet_model, slot_model)
        self.cfg = cfg
        self.packet = ClassifierSession(packet_model, cfg.packet_decider) if packet_model is not None else None
        self.slot = ClassifierSession(slot_model, cfg.slot_decider) if slot_model is not None else None
        self.slots = SlotStream(cfg.trace.slot_delta, cfg.trace.heavy_threshold, cfg.trace.mtu,
                                cfg.trace.ratio_cap) if slot_model is not None else None
        self.machine = SelectionMachine(cfg.selection)
        self.packets_seen = 0
        self.last_ts: Optional[float] = None
        self.last_unknown: Optional[ResultEvent] = None
        self.result: Optional[SelectedResult] = None

    @property
    def done(self) -> bool:
        return self.result is not None

    def _sessions(self) -> List[ClassifierSession]:
        return [s for s in (self.packet, self.slot) if s is not None]

    def _feed(self, source: str, res: ClassificationResult, packets_seen: int) -> Optional[SelectedResult]:
        ev = ResultEvent(source, res.label, res.confidence, res.elapsed, packets_seen)
        if res.label == UNKNOWN_LABEL:
            self.last_unknown = ev
        if not res.final:
            return None
        return self.machine.on_event(ev)

    def _step_slot(self, closed) -> Optional[SelectedResult]:
        if self.slot.done:
            return None
        res = self.slot.push(closed.feature.as_tuple(), closed.close_time)
        return self._feed("slot", res, closed.packets_seen)

    def _fallback(self) -> SelectedResult:
        ev = self.last_unknown
        if ev is None:
            return SelectedResult(UNKNOWN_LABEL, 0.0, "packet" if self.packet else "slot",
                                  self.last_ts or 0.0, self.packets_seen)
        return SelectedResult(ev.label, ev.confidence, ev.source, ev.flow_time, ev.packets_seen)

    def _settle(self, selected: Optional[SelectedResult]) -> Optional[SelectedResult]:
        if selected is not None:
            self.result = selected
        elif all(s.done for s in self._sessions()):
            # больше выдач не будет: ждать пары незачем
            self.result = self.machine.finish() or self._fallback()
        return self.result

    def push(self, pkt: PacketRecord) -> Optional[SelectedResult]:
        """Пакет с временем от начала потока. Возвращает итог, как только он выбран."""
        if self.result is not None:
            return self.result
        prev_ts = pkt.timestamp if self.last_ts is None else self.last_ts
        if self.slots is not None:
            for closed in self.slots.push(pkt):
                selected = self._step_slot(closed)
                if selected is not None:
                    return self._settle(selected)
        self.packets_seen += 1
        self.last_ts = pkt.timestamp
        if self.packet is not None and not self.packet.done:
            x = packet_feature(pkt, prev_ts, self.cfg.trace.mtu).as_tuple()
            selected = self._feed("packet", self.packet.push(x, pkt.timestamp), self.packets_seen)
            if selected is not None:
                return self._settle(selected)
        return self._settle(self.machine.advance(pkt.timestamp))

    def finish(self) -> SelectedResult:
        """Конец потока: закрывает последний неполный слот и выдаёт итог (с откатом на "unknown")."""
        if self.result is not None:
            return self.result
        if self.packets_seen == 0:
            raise ValueError("cannot finish a flow that saw no packets")
        if self.slots is not None and not self.slot.done:
            selected = self._step_slot(self.slots.close_current())
            if selected is not None:
                return self._settle(selected)
        self.result = self.machine.finish() or self._fallback()
        return self.result


def run_flow(flow: FlowTrace, packet_model: Optional[BaseFlowClassifier],
             slot_model: Optional[BaseFlowClassifier], cfg: PipelineConfig = PipelineConfig()) -> SelectedResult:
    session = FlowSession(packet_model, slot_model, cfg)
    for pkt in flow.packets:
        selected = session.push(pkt)
        if selected is not None:
            return selected
    return session.finish()


# --- Потоковый диспетчер ---

def canonical_key(pkt: PacketRecord) -> Tuple:
    k = pkt.flow_key
    a = (k.src_addr, k.src_port)
    b = (k.dst_addr, k.dst_port)
    return (pkt.transport, pkt.flow_id, min(a, b), max(a, b))


# простой дольше этого закрывает поток: тот же five-tuple дальше - новое соединение
FLOW_IDLE_TIMEOUT = 60.0


class _LiveFlow:
    def __init__(self, first: PacketRecord, session: FlowSession):
        self.key: FiveTuple = first.flow_key
        self.initiator = (first.flow_key.src_addr, first.flow_key.src_port)
        self.t0 = first.timestamp
        self.last = 0.0
        self.last_seen = first.timestamp
        self.session = session

    def rebase(self, pkt: PacketRecord) -> PacketRecord:
        self.last_seen = max(self.last_seen, pkt.timestamp)
        ts = pkt.timestamp - self.t0
        if ts < self.last:
            logger.warning(f"[Stream] {self.key}: out-of-order packet at {pkt.timestamp}, clamped")
            ts = self.last
        self.last = ts
        sender = (pkt.flow_key.src_addr, pkt.flow_key.src_port)
        direction = Direction.UPSTREAM if sender == self.initiator else Direction.DOWNSTREAM
        return dataclasses.replace(pkt, timestamp=ts, direction=direction, flow_key=self.key)


@dataclass
class _Tombstone:
    """Поток с уже выданным итогом: держим только ключ и время последнего пакета."""
    key: FiveTuple
    last_seen: float


class StreamingClassifier:
    """
    Диспетчер по каноническому ключу потока: принимает перемешанный поток
    пакетов (по времени захвата) и выдаёт ровно один итог на соединение.

    После выдачи итога сессия потока освобождается. Пакет того же five-tuple
    после простоя idle_timeout или новый SYN (без ACK) начинают новое соединение.
    Итоги потоков, закрытых по простою, отдают expire() и flush().
    """

    def __init__(self, packet_model: Optional[BaseFlowClassifier], slot_model: Optional[BaseFlowClassifier],
                 cfg: PipelineConfig = PipelineConfig(), idle_timeout: float = FLOW_IDLE_TIMEOUT):
        check_class_sets(packet_model, slot_model)
        if idle_timeout <= 0:
            raise ValueError(f"idle_timeout must be > 0, got {idle_timeout}")
        self.packet_model = packet_model
        self.slot_model = slot_model
        self.cfg = cfg
        self.idle_timeout = idle_timeout
        self.flows: Dict[Tuple, Union[_LiveFlow, _Tombstone]] = {}
        self._closed: List[Tuple[FiveTuple, SelectedResult]] = []

    def _starts_new(self, entry: Union[_LiveFlow, _Tombstone], pkt: PacketRecord) -> bool:
        if pkt.timestamp - entry.last_seen >= self.idle_timeout:
            return True
        return isinstance(entry, _Tombstone) and pkt.syn_flag and not pkt.ack_flag

    def push(self, pkt: PacketRecord) -> Optional[Tuple[FiveTuple, SelectedResult]]:
        key = canonical_key(pkt)
        entry = self.flows.get(key)
        if entry is not None and self._starts_new(entry, pkt):
            if isinstance(entry, _LiveFlow):
                logger.info(f"[Stream] {entry.key}: idle for {pkt.timestamp - entry.last_seen:.1f}s, closed")
                self._closed.append((entry.key, entry.session.finish()))
            del self.flows[key]
            entry = None
        if entry is None:
            entry = _LiveFlow(pkt, FlowSession(self.packet_model, self.slot_model, self.cfg))
            self.flows[key] = entry
        if isinstance(entry, _Tombstone):
            entry.last_seen = max(entry.last_seen, pkt.timestamp)
            return None
        selected = entry.session.push(entry.rebase(pkt))
        if selected is None:
            return None
        self.flows[key] = _Tombstone(entry.key, entry.last_seen)
        return entry.key, selected

    def expire(self, now: float) -> List[Tuple[FiveTuple, SelectedResult]]:
        """Закрывает потоки без пакетов дольше idle_timeout к моменту now и забывает их."""
        out, self._closed = self._closed, []
        for key, entry in list(self.flows.items()):
            if now - entry.last_seen >= self.idle_timeout:
                del self.flows[key]
                if isinstance(entry, _LiveFlow):
                    out.append((entry.key, entry.session.finish()))
        return out

    def flush(self) -> List[Tuple[FiveTuple, SelectedResult]]:
        """Конец входа: итог для всех потоков, которые ещё не выдали результат (в порядке появления)."""
        out, self._closed = self._closed, []
        for entry in self.flows.values():
            if isinstance(entry, _LiveFlow):
                out.append((entry.key, entry.session.finish()))
        self.flows.clear()
        return out


def result_record(key: FiveTuple, selected: SelectedResult) -> dict:
    return {"flow_key": str(key), **selected.to_dict()}
