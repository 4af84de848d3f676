# src/ingest/trace_reader.py

import dataclasses
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, TextIO, Tuple

from pydantic import ValidationError

from src.core.errors import TraceParseError
from src.core.log import get_logger
from src.ingest.trace_schema import TraceLine

logger = get_logger(__name__)

UNKNOWN_LABEL = "unknown"


class Direction(str, Enum):
    UPSTREAM = "up"
    DOWNSTREAM = "down"

    def flipped(self) -> "Direction":
        return Direction.DOWNSTREAM if self is Direction.UPSTREAM else Direction.UPSTREAM


@dataclass(frozen=True, slots=True)
class FiveTuple:
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    protocol: str

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_addr, self.src_addr, self.dst_port, self.src_port, self.protocol)

    def __str__(self) -> str:
        return f"{self.src_addr}:{self.src_port}-{self.dst_addr}:{self.dst_port}/{self.protocol}"


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp: float
    flow_key: FiveTuple
    direction: Direction
    payload_len: int
    transport: str
    syn_flag: bool = False
    ack_flag: bool = False
    label: Optional[str] = None
    flow_id: Optional[str] = None

    @property
    def is_upstream(self) -> bool:
        return self.direction is Direction.UPSTREAM


@dataclass(frozen=True)
class FlowTrace:
    """
    Поток: пакеты одного five-tuple, отсортированы по времени, первый пакет в 0,
    направление «up» - от инициатора (отправителя первого пакета).
    """
    key: FiveTuple
    packets: Tuple[PacketRecord, ...]
    label: Optional[str] = None
    rtt: Optional[float] = None
    flow_id: Optional[str] = None

    def __post_init__(self):
        if not self.packets:
            raise ValueError("FlowTrace must contain at least one packet")
        if self.packets[0].timestamp != 0.0:
            raise ValueError("FlowTrace must be rebased: first packet timestamp must be 0")
        if not self.packets[0].is_upstream:
            raise ValueError("FlowTrace first packet must be upstream")
        prev = 0.0
        for p in self.packets:
            if p.timestamp < prev:
                raise ValueError("FlowTrace packets must be in ascending timestamp order")
            prev = p.timestamp

    @property
    def protocol(self) -> str:
        return self.key.protocol

    @property
    def duration(self) -> float:
        return self.packets[-1].timestamp

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN_LABEL

    def with_label(self, label: Optional[str]) -> "FlowTrace":
        return dataclasses.replace(self, label=label)

    def with_flow_id(self, flow_id: Optional[str]) -> "FlowTrace":
        return dataclasses.replace(self, flow_id=flow_id)


# --- Разбор ---

def _record_from_line(line: TraceLine) -> PacketRecord:
    key = FiveTuple(line.src, line.dst, line.sp, line.dp, line.proto)
    return PacketRecord(
        timestamp=float(line.ts),
        flow_key=key,
        direction=Direction(line.dir),
        payload_len=line.plen,
        transport=line.proto,
        syn_flag=line.syn,
        ack_flag=line.ack,
        label=line.label,
        flow_id=None if line.fid is None else str(line.fid),
    )


def parse_trace(stream: Iterable[str], mtu: int = 1500) -> List[PacketRecord]:
    """
    Разбирает trace-файл в список PacketRecord в порядке строк.
    Пустые строки пропускаются; пустой вход даёт пустой список.

    :raises TraceParseError: строка не соответствует формату (номер строки и поле в сообщении)
    """
    records: List[PacketRecord] = []
    for line_no, raw in enumerate(stream, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise TraceParseError(line_no, None, f"invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict):
            raise TraceParseError(line_no, None, "line must be a JSON object")
        try:
            line = TraceLine.model_validate(obj, context={"mtu": mtu})
        except ValidationError as e:
            err = e.errors()[0]
            field = ".".join(str(x) for x in err["loc"]) or None
            msg = err["msg"]
            if msg.startswith("Value error, "):
                msg = msg[len("Value error, "):]
            raise TraceParseError(line_no, field, msg) from e
        records.append(_record_from_line(line))
    return records


# --- Группировка ---

def handshake_rtt(flow: FlowTrace) -> Optional[float]:
    """
    RTT по трёхстороннему рукопожатию: первый downstream SYN+ACK минус первый upstream SYN.
    None - UDP или захват без SYN; вызывающий берёт fallback RTT из конфига.
    """
    if flow.protocol != "tcp":
        return None
    syn_ts: Optional[float] = None
    for p in flow.packets:
        if syn_ts is None:
            if p.is_upstream and p.syn_flag and not p.ack_flag:
                syn_ts = p.timestamp
        elif not p.is_upstream and p.syn_flag and p.ack_flag:
            return p.timestamp - syn_ts
    return None


def normalize_flow(
    packets: Sequence[PacketRecord],
    key: FiveTuple,
    label: Optional[str] = None,
    flow_id: Optional[str] = None,
) -> FlowTrace:
    """
    Приводит набор пакетов к инвариантам FlowTrace: сортировка (стабильная),
    отсчёт времени от первого пакета, «up» = направление первого пакета.
    Отрицательные времена (после искажения) прижимаются к 0.
    """
    if not packets:
        raise ValueError("cannot build a flow from zero packets")
    ordered = sorted(packets, key=lambda p: max(p.timestamp, 0.0))
    t0 = max(ordered[0].timestamp, 0.0)
    flip = not ordered[0].is_upstream
    if flip:
        key = key.reversed()
    rebuilt = tuple(
        PacketRecord(
            timestamp=max(p.timestamp, 0.0) - t0,
            flow_key=key,
            direction=p.direction.flipped() if flip else p.direction,
            payload_len=p.payload_len,
            transport=key.protocol,
            syn_flag=p.syn_flag,
            ack_flag=p.ack_flag,
        )
        for p in ordered
    )
    flow = FlowTrace(key=key, packets=rebuilt, label=label, flow_id=flow_id)
    return dataclasses.replace(flow, rtt=handshake_rtt(flow))


def group_flows(records: Sequence[PacketRecord]) -> List[FlowTrace]:
    """
    Группирует записи по каноническому five-tuple (плюс fid, если задан).
    Порядок потоков - по первому появлению.
    """
    groups: Dict[tuple, List[PacketRecord]] = {}
    for rec in records:
        k = rec.flow_key
        a = (k.src_addr, k.src_port)
        b = (k.dst_addr, k.dst_port)
        gk = (rec.transport, rec.flow_id, min(a, b), max(a, b))
        groups.setdefault(gk, []).append(rec)

    flows: List[FlowTrace] = []
    for members in groups.values():
        members = sorted(members, key=lambda p: p.timestamp)
        first = members[0]
        key = first.flow_key
        initiator = (key.src_addr, key.src_port)
        label = next((p.label for p in members if p.label is not None), None)
        oriented = [
            dataclasses.replace(
                p,
                direction=Direction.UPSTREAM
                if (p.flow_key.src_addr, p.flow_key.src_port) == initiator
                else Direction.DOWNSTREAM,
            )
            for p in members
        ]
        flows.append(normalize_flow(oriented, key, label=label, flow_id=first.flow_id))
    logger.debug(f"[Ingest] Grouped {len(records)} records into {len(flows)} flows")
    return flows


# --- Сериализация ---

def trace_lines(flow: FlowTrace) -> Iterator[str]:
    for p in flow.packets:
        sender = flow.key if p.is_upstream else flow.key.reversed()
        obj = {
            "ts": p.timestamp,
            "src": sender.src_addr,
            "dst": sender.dst_addr,
            "sp": sender.src_port,
            "dp": sender.dst_port,
            "proto": flow.key.protocol,
            "dir": p.direction.value,
            "plen": p.payload_len,
            "syn": p.syn_flag,
            "ack": p.ack_flag,
        }
        if flow.label is not None:
            obj["label"] = flow.label
        if flow.flow_id is not None:
            obj["fid"] = flow.flow_id
        yield json.dumps(obj, separators=(",", ":"))


def write_flows(flows: Iterable[FlowTrace], fp: TextIO) -> int:
    n = 0
    for flow in flows:
        for line in trace_lines(flow):
            fp.write(line + "\n")
        n += 1
    return n


def save_flows(flows: Iterable[FlowTrace], path: str) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        return write_flows(flows, f)


def load_flows(path: str, mtu: int = 1500) -> List[FlowTrace]:
    with open(path, "r", encoding="utf-8") as f:
        records = parse_trace(f, mtu=mtu)
    flows = group_flows(records)
    logger.info(f"[Ingest] Loaded {len(flows)} flows ({len(records)} packets) from {path}")
    return flows


def with_flow_ids(flows: Sequence[FlowTrace]) -> List[FlowTrace]:
    """Нумерует потоки, чтобы копии с одинаковым five-tuple не слились при записи."""
    return [f.with_flow_id(str(i)) for i, f in enumerate(flows)]
