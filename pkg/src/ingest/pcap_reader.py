# src/ingest/pcap_reader.py

import socket
from typing import List, Optional

from src.core.log import get_logger
from src.ingest.trace_reader import Direction, FiveTuple, PacketRecord

logger = get_logger(__name__)


def _ip_to_str(raw: bytes) -> str:
    family = socket.AF_INET if len(raw) == 4 else socket.AF_INET6
    return socket.inet_ntop(family, raw)


def pcap_to_records(path: str, label: Optional[str] = None, mtu: int = 1500) -> List[PacketRecord]:
    """
    Конвертирует pcap в PacketRecord (только IPv4/IPv6 + TCP/UDP, остальное отбрасывается).
    payload_len - длина полезной нагрузки транспортного уровня, обрезанная до MTU.
    Время отсчитывается от первого пакета файла. Направление здесь всегда «up»:
    group_flows пересчитает его от инициатора.
    """
    try:
        import dpkt
    except ImportError as e:  # dpkt - необязательная зависимость
        raise RuntimeError("pcap ingestion requires the 'dpkt' package") from e

    records: List[PacketRecord] = []
    skipped = truncated = 0
    t0: Optional[float] = None
    with open(path, "rb") as f:
        reader = dpkt.pcap.Reader(f)
        for ts, buf in reader:
            try:
                eth = dpkt.ethernet.Ethernet(buf)
            except (dpkt.dpkt.UnpackError, IndexError):
                skipped += 1
                continue
            ip = eth.data
            if not isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
                skipped += 1
                continue
            seg = ip.data
            if isinstance(seg, dpkt.tcp.TCP):
                proto = "tcp"
                syn = bool(seg.flags & dpkt.tcp.TH_SYN)
                ack = bool(seg.flags & dpkt.tcp.TH_ACK)
            elif isinstance(seg, dpkt.udp.UDP):
                proto, syn, ack = "udp", False, False
            else:
                skipped += 1
                continue
            if t0 is None:
                t0 = float(ts)
            if len(seg.data) > mtu:
                truncated += 1
            key = FiveTuple(_ip_to_str(ip.src), _ip_to_str(ip.dst), seg.sport, seg.dport, proto)
            records.append(PacketRecord(
                timestamp=max(float(ts) - t0, 0.0),
                flow_key=key,
                direction=Direction.UPSTREAM,
                payload_len=min(len(seg.data), mtu),
                transport=proto,
                syn_flag=syn,
                ack_flag=ack,
                label=label,
            ))
    logger.info(f"[Ingest] {path}: {len(records)} TCP/UDP packets, {skipped} skipped")
    if truncated:
        logger.warning(f"[Ingest] {path}: {truncated} payloads longer than MTU {mtu} truncated "
                       f"(offload-merged segments?)")
    return records
