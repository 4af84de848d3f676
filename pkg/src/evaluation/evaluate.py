# src/evaluation/evaluate.py

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config.settings import DisorderParams, TraceConfig, TrainConfig
from src.core.log import get_logger
from src.evaluation.metrics import FlowOutcome, MetricsReport, build_report
from src.features.augmentation import augment_dataset
from src.features.representation import encode_flow
from src.ingest.trace_reader import FlowTrace
from src.models.base_classifier import BaseFlowClassifier
from src.selection.flow_runner import PipelineConfig, check_class_sets, run_flow
from src.training.supervised import predict_fixed_input, train_fixed_input

logger = get_logger(__name__)

Mode = Literal["fused", "packet", "slot"]


def evaluate_system(packet_model: Optional[BaseFlowClassifier], slot_model: Optional[BaseFlowClassifier],
                    cfg: PipelineConfig, test_flows: Sequence[FlowTrace],
                    disorder: Optional[DisorderParams] = None, seed: int = 0, mode: Mode = "fused",
                    workers: int = 1, name: Optional[str] = None) -> MetricsReport:
    """
    Прогоняет run_flow по тестовым потокам и считает метрики.
    Потери/ретрансляции (disorder) применяются к копиям тестовых потоков.
    mode="packet"/"slot" отключает второй путь (абляция).
    """
    if mode == "packet":
        slot_model = None
    elif mode == "slot":
        packet_model = None
    check_class_sets(packet_model, slot_model)
    class_names = (packet_model or slot_model).class_names

    flows = list(test_flows)
    if disorder is not None:
        flows = augment_dataset(flows, "disorder", seed, disorder=disorder)

    started = time.perf_counter()

    def _one(flow: FlowTrace) -> FlowOutcome:
        sel = run_flow(flow, packet_model, slot_model, cfg)
        return FlowOutcome(flow.label, sel.label, sel.packets_consumed, sel.decided_at)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one, flows))
    else:
        outcomes = [_one(f) for f in flows]
    elapsed = time.perf_counter() - started
    logger.info(f"[Evaluate] {mode}: {len(flows)} flows in {elapsed:.2f}s wall-clock "
                f"({1000.0 * elapsed / max(len(flows), 1):.2f} ms/flow)")
    return build_report(outcomes, class_names, name=name or mode)


def fixed_input_baseline(granularity: str, n: int, train_flows: Sequence[FlowTrace],
                         test_flows: Sequence[FlowTrace], cfg: TrainConfig,
                         trace: TraceConfig = TraceConfig(), seed: int = 0,
                         epochs: Optional[int] = None) -> MetricsReport:
    """
    Базовая линия «первые n пакетов/слотов»: обучение с учителем без unknown,
    оценка только на известных типах; колонки packets/time - фиксированная цена чтения n точек.
    """
    model = train_fixed_input(train_flows, granularity, n, cfg, trace, seed, epochs)
    outcomes = []
    for flow in test_flows:
        if flow.is_unknown:
            continue
        label, _, _ = predict_fixed_input(model, flow, n, trace)
        enc = encode_flow(flow, granularity, mtu=trace.mtu, delta=trace.slot_delta,
                          heavy_threshold=trace.heavy_threshold, ratio_cap=trace.ratio_cap, max_steps=n)
        outcomes.append(FlowOutcome(flow.label, label, int(enc.packets[-1]), float(enc.times[-1])))
    prefix = "Pkt" if granularity == "packet" else "Slot"
    return build_report(outcomes, model.class_names, name=f"{prefix}-{n}", with_unknown=False)


def aggregate_reports(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """Среднее и стандартное отклонение (ddof=0) по итерациям для каждой метрики."""
    if not reports:
        raise ValueError("nothing to aggregate")
    df = pd.DataFrame([r.summary_row() for r in reports], dtype="float64")
    return pd.DataFrame({"mean": df.mean(axis=0), "std": df.std(axis=0, ddof=0)})


def format_mean_std(agg: pd.DataFrame, digits: int = 2) -> Dict[str, str]:
    out = {}
    for metric, row in agg.iterrows():
        if np.isnan(row["mean"]):
            out[metric] = "-"
        else:
            out[metric] = f"{row['mean']:.{digits}f} ± {row['std']:.{digits}f}"
    return out


def evaluate_iterations(runs: Sequence[Tuple[str, MetricsReport]]) -> pd.DataFrame:
    """Таблица «метод × метрика» в виде строк mean ± std; runs - пары (метод, отчёт итерации)."""
    grouped: Dict[str, List[MetricsReport]] = {}
    for method, report in runs:
        grouped.setdefault(method, []).append(report)
    rows = []
    for method, reports in grouped.items():
        rows.append({"method": method, **format_mean_std(aggregate_reports(reports))})
    return pd.DataFrame(rows)
