# src/features/augmentation.py

import dataclasses
from collections import Counter
from typing import List, Optional, Sequence

import numpy as np

from src.config.settings import AugmentConfig, AugmentParams, DisorderParams
from src.core.log import get_logger
from src.ingest.trace_reader import UNKNOWN_LABEL, FlowTrace, PacketRecord, normalize_flow

logger = get_logger(__name__)


def flow_rng(master_seed: int, flow_index: int) -> np.random.Generator:
    """Независимый поток случайных чисел для потока flow_index."""
    return np.random.default_rng([master_seed, flow_index])


def draw_alpha_attr(params: AugmentParams, rng) -> float:
    if params.alpha_attr is not None:
        return params.alpha_attr
    low, high = params.attr_range()
    return float(rng.uniform(low, high))


def augment_flow(flow: FlowTrace, params: AugmentParams, rng) -> FlowTrace:
    """
    Искажает долю alpha_attr пакетов потока:
      payload' = payload·α_ps + U(0, MTU)·(1 − α_ps)  (округление, обрезка в [0, MTU])
      t'       = t_i + ((t_{i+1} − t_i)·U(0,1) − (t_i − t_{i−1})·U(0,1))·α_ts
      направление переворачивается с вероятностью α_dir, кроме пакета 0:
      его отправитель задаёт ориентацию потока.
    Если сдвиг времени ставит первым пакет «down», normalize_flow всё же
    переориентирует поток; при α_ts = 0 этого не происходит.
    У крайних пакетов отсутствующий сосед даёт нулевой член.
    Порядок обращений к rng: alpha_attr (если не задан), выбор индексов,
    затем для каждого выбранного пакета по возрастанию индекса:
    uniform(0, MTU), uniform(0, 1), uniform(0, 1), random().

    strong_unknown помечает результат как "unknown", weak_balance сохраняет метку.
    """
    packets = flow.packets
    n = len(packets)
    alpha_attr = draw_alpha_attr(params, rng)
    label = UNKNOWN_LABEL if params.mode == "strong_unknown" else flow.label
    k = int(round(alpha_attr * n))
    if k == 0:
        return flow.with_label(label)

    chosen = np.sort(np.asarray(rng.choice(n, size=k, replace=False)))
    ts = [p.timestamp for p in packets]
    out: List[PacketRecord] = list(packets)
    for i in chosen:
        i = int(i)
        p = packets[i]
        noise = float(rng.uniform(0.0, params.mtu))
        payload = int(round(p.payload_len * params.alpha_ps + noise * (1.0 - params.alpha_ps)))
        payload = min(max(payload, 0), params.mtu)
        fwd = ts[i + 1] - ts[i] if i + 1 < n else 0.0
        back = ts[i] - ts[i - 1] if i > 0 else 0.0
        u_fwd = float(rng.uniform(0.0, 1.0))
        u_back = float(rng.uniform(0.0, 1.0))
        t_new = ts[i] + (fwd * u_fwd - back * u_back) * params.alpha_ts
        flip = float(rng.random()) < params.alpha_dir
        out[i] = dataclasses.replace(
            p,
            timestamp=max(t_new, 0.0),
            payload_len=payload,
            direction=p.direction.flipped() if flip and i > 0 else p.direction,
        )
    return normalize_flow(out, flow.key, label=label, flow_id=flow.flow_id)


def draw_drop_rate(params: DisorderParams, rng) -> float:
    """Доля потерь на поток: Normal(drop_mean, drop_std), усечённое до [0, 1) отбраковкой."""
    if params.drop_rate is not None:
        return params.drop_rate
    if params.drop_std == 0:
        return params.drop_mean
    while True:
        x = float(rng.normal(params.drop_mean, params.drop_std))
        if 0.0 <= x < 1.0:
            return x


def simulate_disorder(flow: FlowTrace, params: DisorderParams, rng) -> FlowTrace:
    """
    Потери и ретрансляции только для тестовых данных.
    TCP: потерянный пакет возвращается в момент t + RTT (handshake или fallback).
    UDP: потерянный пакет удаляется. Первый пакет не теряется никогда.
    """
    rate = draw_drop_rate(params, rng)
    if rate == 0.0:
        return flow
    n = len(flow.packets)
    dropped = np.asarray(rng.random(n)) < rate
    dropped[0] = False
    if not dropped.any():
        return flow

    if flow.protocol == "tcp":
        rtt = flow.rtt if flow.rtt is not None else params.fallback_rtt
        packets = [
            dataclasses.replace(p, timestamp=p.timestamp + rtt) if d else p
            for p, d in zip(flow.packets, dropped)
        ]
    else:
        packets = [p for p, d in zip(flow.packets, dropped) if not d]
    return normalize_flow(packets, flow.key, label=flow.label, flow_id=flow.flow_id)


# --- Сборка обучающего набора ---

def make_pseudo_unknowns(flows: Sequence[FlowTrace], count: int, params: AugmentParams,
                         seed: int) -> List[FlowTrace]:
    known = [f for f in flows if f.label is not None and not f.is_unknown]
    if not known or count <= 0:
        return []
    picker = np.random.default_rng([seed, 0x5EED])
    sources = picker.integers(0, len(known), size=count)
    strong = params.model_copy(update={"mode": "strong_unknown"})
    return [augment_flow(known[int(s)], strong, flow_rng(seed, j)) for j, s in enumerate(sources)]


def balance_classes(flows: Sequence[FlowTrace], params: AugmentParams, seed: int) -> List[FlowTrace]:
    """
    Слабая аугментация против дисбаланса: каждый известный класс дополняется
    копиями до размера самого большого класса. Возвращает только новые потоки.
    """
    by_label = {}
    for f in flows:
        if f.label is not None and not f.is_unknown:
            by_label.setdefault(f.label, []).append(f)
    if not by_label:
        return []
    target = max(len(v) for v in by_label.values())
    weak = params.model_copy(update={"mode": "weak_balance"})
    picker = np.random.default_rng([seed, 0xBA1])
    extra: List[FlowTrace] = []
    stream = 0
    for label in sorted(by_label):
        members = by_label[label]
        for s in picker.integers(0, len(members), size=target - len(members)):
            extra.append(augment_flow(members[int(s)], weak, flow_rng(seed + 1, stream)))
            stream += 1
    return extra


def build_training_set(flows: Sequence[FlowTrace], cfg: AugmentConfig, mtu: int, seed: int) -> List[FlowTrace]:
    """
    Обучающий набор: реальные потоки + псевдо-неизвестные (strong) + балансировка (weak).
    unknown_mix="supplement" оставляет реальные unknown, "replace" заменяет их псевдо-неизвестными.
    """
    base = list(flows)
    if cfg.unknown_mix == "replace":
        base = [f for f in base if not f.is_unknown]
    known_count = sum(1 for f in base if f.label is not None and not f.is_unknown)
    n_pseudo = int(round(cfg.pseudo_unknown_ratio * known_count))
    pseudo = make_pseudo_unknowns(base, n_pseudo, cfg.params("strong_unknown", mtu), seed)
    balanced = balance_classes(base, cfg.params("weak_balance", mtu), seed) if cfg.balance else []
    counts = Counter(f.label for f in base)
    logger.info(
        f"[Augment] Training set: {len(base)} flows {dict(sorted(counts.items(), key=lambda kv: str(kv[0])))}, "
        f"+{len(pseudo)} pseudo-unknown, +{len(balanced)} weak-balanced"
    )
    return base + balanced + pseudo


def augment_dataset(flows: Sequence[FlowTrace], mode: str, seed: int,
                    params: Optional[AugmentParams] = None,
                    disorder: Optional[DisorderParams] = None) -> List[FlowTrace]:
    """Прогон по набору потоков; поток i получает генератор flow_rng(seed, i)."""
    if mode == "disorder":
        d = disorder or DisorderParams()
        return [simulate_disorder(f, d, flow_rng(seed, i)) for i, f in enumerate(flows)]
    p = (params or AugmentParams()).model_copy(
        update={"mode": "strong_unknown" if mode == "strong" else "weak_balance"}
    )
    return [augment_flow(f, p, flow_rng(seed, i)) for i, f in enumerate(flows)]
