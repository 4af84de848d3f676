# src/evaluation/report.py

"""
Выгрузка отчётов: JSON (полный MetricsReport), CSV со сводной строкой в
колонках таблицы сравнения методов и CDF-файлы (шаги и секунды по классам).
Логи сюда не попадают: одинаковые прогоны дают байт-в-байт одинаковые файлы.
"""

import json
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from src.evaluation.metrics import MetricsReport

TABLE_COLUMNS = {
    "name": "Method",
    "macro_f1": "Macro F1",
    "accuracy": "Accuracy",
    "packets_mean": "Packets",
    "packets_std": "Packets std",
    "time_mean": "Time (s)",
    "time_std": "Time std",
    "unknown_fpr": "Unknown FPR",
    "unknown_tpr": "Unknown TPR",
}


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True)


def summary_table(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    rows = [{"name": r.name, **r.summary_row()} for r in reports]
    return pd.DataFrame(rows, columns=list(TABLE_COLUMNS)).rename(columns=TABLE_COLUMNS)


def cdf_frame(values_by_class: Dict[str, List[float]], value_name: str) -> pd.DataFrame:
    frames = []
    for label in sorted(values_by_class):
        values = np.sort(np.asarray(values_by_class[label], dtype=np.float64))
        if len(values) == 0:
            continue
        frames.append(pd.DataFrame({
            "class": label,
            value_name: values,
            "cdf": np.arange(1, len(values) + 1) / len(values),
        }))
    if not frames:
        return pd.DataFrame(columns=["class", value_name, "cdf"])
    return pd.concat(frames, ignore_index=True)


def write_report(report: MetricsReport, out_dir: str, stem: str = "report") -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.json", out / f"{stem}.csv", out / f"{stem}_cdf_steps.csv",
             out / f"{stem}_cdf_seconds.csv"]
    paths[0].write_text(report_json(report) + "\n", encoding="utf-8")
    summary_table([report]).to_csv(paths[1], index=False)
    cdf_frame(report.steps_by_class, "steps").to_csv(paths[2], index=False)
    cdf_frame(report.seconds_by_class, "seconds").to_csv(paths[3], index=False)
    return paths


def write_aggregate(table: pd.DataFrame, path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(p, index=False)
    return p
