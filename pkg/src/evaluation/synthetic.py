# src/evaluation/synthetic.py

"""
Генератор синтетических потоков с различимыми «подписями»: доля upstream,
размеры по направлениям, межпакетные интервалы и пачки. Используется тестами,
приёмочными прогонами и командой synth.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.ingest.trace_reader import Direction, FiveTuple, FlowTrace, PacketRecord, normalize_flow


@dataclass(frozen=True)
class ClassProfile:
    protocol: str
    up_prob: float
    up_size: Tuple[int, int]
    down_size: Tuple[int, int]
    iat_mean: float
    packets: Tuple[int, int] = (30, 60)
    burst_len: Optional[Tuple[int, int]] = None
    burst_gap: float = 0.0
    port: int = 443


PROFILES: Dict[str, ClassProfile] = {
    # запрос вверх, затем пачки тяжёлых пакетов вниз
    "streaming": ClassProfile("tcp", 0.1, (300, 600), (1300, 1460), 0.002, burst_len=(8, 16), burst_gap=0.08),
    "chat": ClassProfile("tcp", 0.5, (40, 300), (40, 300), 0.03, port=5222),
    "transfer": ClassProfile("tcp", 0.85, (1300, 1460), (0, 60), 0.003, burst_len=(10, 20), burst_gap=0.05),
    "control": ClassProfile("udp", 0.7, (400, 700), (100, 300), 0.02, port=8801),
    "voip": ClassProfile("udp", 0.5, (150, 220), (150, 220), 0.02, port=3478),
    # тривиально разделимая пара
    "uplink_heavy": ClassProfile("udp", 1.0, (1300, 1460), (1300, 1460), 0.005, packets=(20, 40), port=9000),
    "downlink_light": ClassProfile("udp", 0.0, (40, 200), (40, 200), 0.005, packets=(20, 40), port=9001),
}


class SyntheticFlowFactory:
    def __init__(self, seed: int = 0, profiles: Optional[Dict[str, ClassProfile]] = None, mtu: int = 1500):
        self.seed = seed
        self.profiles = dict(profiles or PROFILES)
        self.mtu = mtu
        self._label_ids = {label: i for i, label in enumerate(sorted(self.profiles))}

    def _size(self, rng, bounds: Tuple[int, int]) -> int:
        return min(int(rng.integers(bounds[0], bounds[1] + 1)), self.mtu)

    def flow(self, label: str, index: int) -> FlowTrace:
        """Детерминированный поток: тот же (seed, label, index) даёт тот же поток."""
        if label not in self.profiles:
            raise ValueError(f"no synthetic profile for class '{label}'")
        prof = self.profiles[label]
        cid = self._label_ids[label]
        rng = np.random.default_rng([self.seed, cid, index])
        key = FiveTuple(f"10.{cid}.{index // 250 % 250}.{index % 250 + 1}", f"172.16.{cid}.1",
                        int(rng.integers(1024, 65536)), prof.port, prof.protocol)

        packets: List[PacketRecord] = []

        def add(ts: float, up: bool, size: int, syn: bool = False, ack: bool = False):
            packets.append(PacketRecord(ts, key, Direction.UPSTREAM if up else Direction.DOWNSTREAM,
                                        size, prof.protocol, syn, ack))

        t = 0.0
        if prof.protocol == "tcp":
            rtt = float(rng.uniform(0.01, 0.06))
            add(0.0, True, 0, syn=True)
            add(rtt, False, 0, syn=True, ack=True)
            t = rtt + float(rng.uniform(0.0005, 0.002))
            add(t, True, 0, ack=True)

        n = int(rng.integers(prof.packets[0], prof.packets[1] + 1))
        burst_left = int(rng.integers(prof.burst_len[0], prof.burst_len[1] + 1)) if prof.burst_len else 0
        for i in range(n):
            if packets or i > 0:
                t += float(rng.exponential(prof.iat_mean))
                if prof.burst_len:
                    burst_left -= 1
                    if burst_left <= 0:
                        t += prof.burst_gap * float(rng.uniform(0.8, 1.2))
                        burst_left = int(rng.integers(prof.burst_len[0], prof.burst_len[1] + 1))
            up = float(rng.random()) < prof.up_prob or not packets
            add(t, up, self._size(rng, prof.up_size if up else prof.down_size), ack=prof.protocol == "tcp")
        return normalize_flow(packets, key, label=label)

    def dataset(self, labels: Sequence[str], flows_per_class: int) -> List[FlowTrace]:
        """flows_per_class потоков каждого класса, с уникальными flow_id."""
        flows = []
        for label in labels:
            for i in range(flows_per_class):
                flows.append(self.flow(label, i).with_flow_id(f"{label}-{i}"))
        return flows
