# src/evaluation/metrics.py

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from src.ingest.trace_reader import UNKNOWN_LABEL

PERCENTILES = (50, 90, 99)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def confusion_counts(true_labels: Sequence[str], pred_labels: Sequence[str],
                     classes: Sequence[str]) -> Dict[str, ClassCounts]:
    """TP/FP/FN по классам; предсказания вне classes (например, "unknown") дают только FN."""
    counts = {c: ClassCounts() for c in classes}
    for t, p in zip(true_labels, pred_labels):
        if t == p:
            if t in counts:
                counts[t].tp += 1
            continue
        if t in counts:
            counts[t].fn += 1
        if p in counts:
            counts[p].fp += 1
    return counts


def macro_f1(confusion: Dict[str, ClassCounts]) -> float:
    if not confusion:
        raise ValueError("macro F1 needs at least one class")
    return 100.0 * float(np.mean([c.f1 for c in confusion.values()]))


class ClassMetrics(BaseModel):
    precision: float
    recall: float
    f1: float
    support: int
    packets_mean: float
    time_mean: float


class MetricsReport(BaseModel):
    name: str = "fastflow"
    macro_f1: float = Field(ge=0.0, le=100.0)
    accuracy: float = Field(ge=0.0, le=100.0)
    # по всем оценённым потокам, включая истинно неизвестные
    packets_mean: float
    packets_std: float
    time_mean: float
    time_std: float
    packets_percentiles: Dict[str, float] = Field(default_factory=dict)
    time_percentiles: Dict[str, float] = Field(default_factory=dict)
    unknown_fpr: Optional[float] = Field(None, ge=0.0, le=100.0)
    unknown_tpr: Optional[float] = Field(None, ge=0.0, le=100.0)
    known_flows: int = 0
    unknown_flows: int = 0
    per_class: Dict[str, ClassMetrics] = Field(default_factory=dict)
    steps_by_class: Dict[str, List[int]] = Field(default_factory=dict)
    seconds_by_class: Dict[str, List[float]] = Field(default_factory=dict)

    def summary_row(self) -> Dict[str, Optional[float]]:
        return {
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "packets_mean": self.packets_mean,
            "packets_std": self.packets_std,
            "time_mean": self.time_mean,
            "time_std": self.time_std,
            "unknown_fpr": self.unknown_fpr,
            "unknown_tpr": self.unknown_tpr,
        }


@dataclass(frozen=True)
class FlowOutcome:
    true_label: str
    label: str
    packets: int
    seconds: float


def _mean_std(values: Sequence[float]):
    if not values:
        return 0.0, 0.0
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _percentiles(values: Sequence[float]) -> Dict[str, float]:
    if not values:
        return {}
    return {f"p{q}": float(np.percentile(values, q)) for q in PERCENTILES}


def build_report(outcomes: Sequence[FlowOutcome], classes: Sequence[str], name: str = "fastflow",
                 with_unknown: bool = True) -> MetricsReport:
    """
    Метрики известных типов считаются по потокам с известной истинной меткой;
    FPR/TPR - по истинно неизвестным (None, если таких нет или with_unknown=False).
    Пакеты и время до решения - по всем потокам: решение есть у каждого,
    в том числе у истинно неизвестных (по ним же отдельно steps_by_class["unknown"]).
    """
    known = [o for o in outcomes if o.true_label != UNKNOWN_LABEL]
    unknown = [o for o in outcomes if o.true_label == UNKNOWN_LABEL]
    classes = sorted(set(classes) | {o.true_label for o in known})
    confusion = confusion_counts([o.true_label for o in known], [o.label for o in known], classes)
    accuracy = 100.0 * sum(o.label == o.true_label for o in known) / len(known) if known else 0.0

    fpr = tpr = None
    if with_unknown and unknown:
        tpr = 100.0 * sum(o.label == UNKNOWN_LABEL for o in unknown) / len(unknown)
        fpr = 100.0 - tpr

    packets = [o.packets for o in outcomes]
    seconds = [o.seconds for o in outcomes]
    p_mean, p_std = _mean_std(packets)
    t_mean, t_std = _mean_std(seconds)
    per_class = {}
    steps_by_class: Dict[str, List[int]] = {}
    seconds_by_class: Dict[str, List[float]] = {}
    for c in classes:
        members = [o for o in outcomes if o.true_label == c]
        steps_by_class[c] = sorted(o.packets for o in members)
        seconds_by_class[c] = sorted(o.seconds for o in members)
        cc = confusion[c]
        per_class[c] = ClassMetrics(
            precision=100.0 * cc.precision, recall=100.0 * cc.recall, f1=100.0 * cc.f1,
            support=len(members),
            packets_mean=_mean_std(steps_by_class[c])[0],
            time_mean=_mean_std(seconds_by_class[c])[0],
        )
    if unknown:
        steps_by_class[UNKNOWN_LABEL] = sorted(o.packets for o in unknown)
        seconds_by_class[UNKNOWN_LABEL] = sorted(o.seconds for o in unknown)

    return MetricsReport(
        name=name,
        macro_f1=macro_f1(confusion) if confusion else 0.0,
        accuracy=accuracy,
        packets_mean=p_mean, packets_std=p_std,
        time_mean=t_mean, time_std=t_std,
        packets_percentiles=_percentiles(packets),
        time_percentiles=_percentiles(seconds),
        unknown_fpr=fpr, unknown_tpr=tpr,
        known_flows=len(known), unknown_flows=len(unknown),
        per_class=per_class,
        steps_by_class=steps_by_class,
        seconds_by_class=seconds_by_class,
    )
