# src/features/representation.py

"""
Двойное представление потока: попакетная последовательность (dir, size, iat)
и послотовая (средние размеры heavy/light по направлениям + отношение up/down).

Слот n (с 0) покрывает [n·δ, (n+1)·δ). Слот считается закрытым, когда
наблюдаемое время достигло (n+1)·δ; классификатор видит только закрытые слоты.
"""

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import RepresentationError
from src.ingest.trace_reader import FlowTrace, PacketRecord

PACKET_DIM = 3
SLOT_DIM = 5
IAT_UNIT = 1e-3
SLOT_EPS = 1e-9


def slot_index(ts: float, delta: float) -> int:
    """Индекс слота (с 0) для момента ts. Допуск SLOT_EPS гасит ошибки вида 0.15/0.05 = 2.999..."""
    return int(math.floor(ts / delta + SLOT_EPS))


# --- Попакетное представление ---

@dataclass(frozen=True, slots=True)
class PacketFeature:
    dir: int
    size: float
    iat: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return (float(self.dir), self.size, self.iat)


@dataclass(frozen=True)
class PacketSequence:
    features: Tuple[PacketFeature, ...]
    timestamps: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.features)

    def to_array(self) -> np.ndarray:
        if not self.features:
            return np.zeros((0, PACKET_DIM))
        return np.array([f.as_tuple() for f in self.features], dtype=np.float64)

    def times(self) -> np.ndarray:
        return np.asarray(self.timestamps, dtype=np.float64)

    def packet_counts(self) -> np.ndarray:
        return np.arange(1, len(self.features) + 1)


def packet_feature(pkt: PacketRecord, prev_ts: float, mtu: int = 1500) -> PacketFeature:
    """
    dir = 1 для upstream; size = payload/MTU; iat = ln(1 + Δt / 1 мс).
    Для первого пакета потока prev_ts = его собственному времени, iat = 0.
    """
    dt = pkt.timestamp - prev_ts
    if dt < 0:
        raise RepresentationError(
            f"timestamp regression: packet at {pkt.timestamp} precedes previous at {prev_ts}"
        )
    return PacketFeature(
        dir=1 if pkt.is_upstream else 0,
        size=pkt.payload_len / mtu,
        iat=math.log1p(dt / IAT_UNIT),
    )


def build_packet_sequence(flow: FlowTrace, n: int, mtu: int = 1500) -> PacketSequence:
    if n < 1:
        raise RepresentationError("n must be ≥ 1")
    if not flow.packets:
        raise RepresentationError("empty flow")
    packets = flow.packets[:n]
    feats = []
    prev_ts = packets[0].timestamp
    for p in packets:
        feats.append(packet_feature(p, prev_ts, mtu))
        prev_ts = p.timestamp
    return PacketSequence(tuple(feats), tuple(p.timestamp for p in packets))


# --- Послотовое представление ---

@dataclass(frozen=True, slots=True)
class SlotFeature:
    mean_heavy_up: float
    mean_heavy_down: float
    mean_light_up: float
    mean_light_down: float
    updown_ratio: float

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.mean_heavy_up, self.mean_heavy_down, self.mean_light_up,
                self.mean_light_down, self.updown_ratio)


ZERO_SLOT = SlotFeature(0.0, 0.0, 0.0, 0.0, 0.0)


def _mean(total_bytes: int, count: int, mtu: int) -> float:
    return (total_bytes / count) / mtu if count else 0.0


def _updown_ratio(up_bytes: int, down_bytes: int, ratio_cap: float) -> float:
    if down_bytes == 0:
        return ratio_cap if up_bytes > 0 else 0.0
    return min(max(up_bytes / down_bytes, 0.0), ratio_cap)


def slot_aggregate(
    packets: Sequence[PacketRecord],
    heavy_threshold: int = 1200,
    mtu: int = 1500,
    ratio_cap: float = 100.0,
) -> SlotFeature:
    """
    Агрегат одного слота. heavy - payload строго больше порога.
    Пустая группа даёт среднее 0; Σdown = 0 при Σup > 0 даёт ratio_cap.
    """
    heavy_up = [p.payload_len for p in packets if p.is_upstream and p.payload_len > heavy_threshold]
    heavy_down = [p.payload_len for p in packets if not p.is_upstream and p.payload_len > heavy_threshold]
    light_up = [p.payload_len for p in packets if p.is_upstream and p.payload_len <= heavy_threshold]
    light_down = [p.payload_len for p in packets if not p.is_upstream and p.payload_len <= heavy_threshold]
    return SlotFeature(
        mean_heavy_up=_mean(sum(heavy_up), len(heavy_up), mtu),
        mean_heavy_down=_mean(sum(heavy_down), len(heavy_down), mtu),
        mean_light_up=_mean(sum(light_up), len(light_up), mtu),
        mean_light_down=_mean(sum(light_down), len(light_down), mtu),
        updown_ratio=_updown_ratio(sum(heavy_up) + sum(light_up), sum(heavy_down) + sum(light_down), ratio_cap),
    )


@dataclass(frozen=True)
class SlotSequence:
    slots: Tuple[SlotFeature, ...]
    delta: float
    counts: Tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.slots)

    def to_array(self) -> np.ndarray:
        if not self.slots:
            return np.zeros((0, SLOT_DIM))
        return np.array([s.as_tuple() for s in self.slots], dtype=np.float64)

    def times(self) -> np.ndarray:
        return np.arange(1, len(self.slots) + 1, dtype=np.float64) * self.delta

    def packet_counts(self) -> np.ndarray:
        """Число пакетов, пришедших до закрытия каждого слота."""
        return np.asarray(self.counts, dtype=np.int64)


class SlotAccumulator:
    """
    Онлайн-агрегат текущего слота: суммы и счётчики heavy/light × up/down.
    Один владелец на живой поток.
    """

    def __init__(self, delta: float, heavy_threshold: int = 1200, mtu: int = 1500,
                 ratio_cap: float = 100.0, index: int = 0):
        if delta <= 0:
            raise RepresentationError("delta must be > 0")
        self.delta = delta
        self.heavy_threshold = heavy_threshold
        self.mtu = mtu
        self.ratio_cap = ratio_cap
        self.index = index
        self._reset()

    def _reset(self):
        # [heavy_up, heavy_down, light_up, light_down]
        self.sums = [0, 0, 0, 0]
        self.counts = [0, 0, 0, 0]
        self.up_bytes = 0
        self.down_bytes = 0

    def add(self, pkt: PacketRecord) -> "SlotAccumulator":
        if slot_index(pkt.timestamp, self.delta) != self.index:
            raise RepresentationError(
                f"packet at {pkt.timestamp} is outside slot {self.index} "
                f"[{self.index * self.delta}, {(self.index + 1) * self.delta}); roll the slot first"
            )
        group = (0 if pkt.payload_len > self.heavy_threshold else 2) + (0 if pkt.is_upstream else 1)
        self.sums[group] += pkt.payload_len
        self.counts[group] += 1
        if pkt.is_upstream:
            self.up_bytes += pkt.payload_len
        else:
            self.down_bytes += pkt.payload_len
        return self

    def finalize(self) -> SlotFeature:
        return SlotFeature(
            mean_heavy_up=_mean(self.sums[0], self.counts[0], self.mtu),
            mean_heavy_down=_mean(self.sums[1], self.counts[1], self.mtu),
            mean_light_up=_mean(self.sums[2], self.counts[2], self.mtu),
            mean_light_down=_mean(self.sums[3], self.counts[3], self.mtu),
            updown_ratio=_updown_ratio(self.up_bytes, self.down_bytes, self.ratio_cap),
        )

    def roll(self) -> SlotFeature:
        feature = self.finalize()
        self._reset()
        self.index += 1
        return feature


def accumulator_add(acc: SlotAccumulator, pkt: PacketRecord) -> SlotAccumulator:
    return acc.add(pkt)


def accumulator_finalize(acc: SlotAccumulator) -> SlotFeature:
    return acc.finalize()


class ClosedSlot(NamedTuple):
    index: int
    feature: SlotFeature
    packets_seen: int
    close_time: float


class SlotStream:
    """
    Потоковый построитель слотов поверх SlotAccumulator: push() закрывает все
    слоты, граница которых не позже времени пакета, и кладёт пакет в текущий.
    """

    def __init__(self, delta: float, heavy_threshold: int = 1200, mtu: int = 1500,
                 ratio_cap: float = 100.0):
        self.acc = SlotAccumulator(delta, heavy_threshold, mtu, ratio_cap)
        self.packets_seen = 0

    @property
    def delta(self) -> float:
        return self.acc.delta

    def advance(self, now: float) -> List[ClosedSlot]:
        closed = []
        target = slot_index(now, self.acc.delta)
        while self.acc.index < target:
            idx = self.acc.index
            feature = self.acc.roll()
            closed.append(ClosedSlot(idx, feature, self.packets_seen, (idx + 1) * self.acc.delta))
        return closed

    def push(self, pkt: PacketRecord) -> List[ClosedSlot]:
        closed = self.advance(pkt.timestamp)
        self.acc.add(pkt)
        self.packets_seen += 1
        return closed

    def close_current(self) -> ClosedSlot:
        """Закрывает текущий (частично заполненный) слот - конец потока."""
        idx = self.acc.index
        feature = self.acc.roll()
        return ClosedSlot(idx, feature, self.packets_seen, (idx + 1) * self.acc.delta)


def _slot_sequence(flow: FlowTrace, delta: float, n_slots: int, heavy_threshold: int,
                   mtu: int, ratio_cap: float) -> SlotSequence:
    buckets: List[List[PacketRecord]] = [[] for _ in range(n_slots)]
    for p in flow.packets:
        idx = slot_index(p.timestamp, delta)
        if idx >= n_slots:
            break
        buckets[idx].append(p)
    counts, seen = [], 0
    for b in buckets:
        seen += len(b)
        counts.append(seen)
    slots = tuple(slot_aggregate(b, heavy_threshold, mtu, ratio_cap) for b in buckets)
    return SlotSequence(slots, delta, tuple(counts))


def build_slot_sequence(
    flow: FlowTrace,
    delta: float,
    up_to: float,
    heavy_threshold: int = 1200,
    mtu: int = 1500,
    ratio_cap: float = 100.0,
) -> SlotSequence:
    """Закрытые слоты на отрезке [0, up_to); незавершённый хвост не выдаётся."""
    if delta <= 0:
        raise RepresentationError("delta must be > 0")
    n_slots = max(slot_index(up_to, delta), 0)
    return _slot_sequence(flow, delta, n_slots, heavy_threshold, mtu, ratio_cap)


def full_slot_sequence(
    flow: FlowTrace,
    delta: float,
    heavy_threshold: int = 1200,
    mtu: int = 1500,
    ratio_cap: float = 100.0,
    max_slots: Optional[int] = None,
) -> SlotSequence:
    """
    Все слоты потока, включая последний, в котором лежит последний пакет
    (конец потока закрывает его). Минимум один слот.
    """
    if delta <= 0:
        raise RepresentationError("delta must be > 0")
    n_slots = slot_index(flow.duration, delta) + 1
    if max_slots is not None:
        n_slots = min(n_slots, max_slots)
    return _slot_sequence(flow, delta, n_slots, heavy_threshold, mtu, ratio_cap)


class EncodedFlow(NamedTuple):
    features: np.ndarray
    times: np.ndarray
    packets: np.ndarray


def encode_flow(flow: FlowTrace, granularity: str, mtu: int = 1500, delta: float = 0.05,
                heavy_threshold: int = 1200, ratio_cap: float = 100.0,
                max_steps: Optional[int] = None) -> EncodedFlow:
    """
    Матрица признаков потока для классификатора плюс, для каждого шага,
    время потока и число пакетов, потреблённых к этому шагу.
    """
    if granularity == "packet":
        n = len(flow.packets) if max_steps is None else max_steps
        seq = build_packet_sequence(flow, n, mtu)
    elif granularity == "slot":
        seq = full_slot_sequence(flow, delta, heavy_threshold, mtu, ratio_cap, max_slots=max_steps)
    else:
        raise RepresentationError(f"unknown granularity: {granularity}")
    return EncodedFlow(seq.to_array(), seq.times(), seq.packet_counts())
