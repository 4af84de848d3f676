# tests/test_evaluation.py

import json
from collections import Counter

import numpy as np
import pandas as pd
import pytest

from src.config.settings import DeciderConfig, DisorderParams, SplitSpec, TrainConfig
from src.core.errors import DatasetError
from src.evaluation.evaluate import (aggregate_reports, evaluate_iterations, evaluate_system,
                                     fixed_input_baseline)
from src.evaluation.metrics import FlowOutcome, build_report, confusion_counts, macro_f1
from src.evaluation.report import cdf_frame, report_json, summary_table, write_report
from src.evaluation.splits import exclusion_schedule, make_splits
from src.evaluation.synthetic import SyntheticFlowFactory
from src.selection.flow_runner import PipelineConfig
from tests.conftest import SizeCodedClassifier, coded_flow

NAMES = ["a", "b", "c", "d", "e"]


def _labeled(labels, per_class):
    flows = []
    for label in labels:
        for _ in range(per_class):
            flows.append(coded_flow(0, label, n=3))
    return flows


# --- Разбиения ---

def test_splits_stratify_and_exclude():
    flows = _labeled(["a", "b", "c"], 10)
    splits = make_splits(flows, SplitSpec(iteration_count=3, exclude_per_iteration=1, seed=5))
    assert len(splits) == 3
    assert sorted(s.excluded[0] for s in splits) == ["a", "b", "c"]
    for split in splits:
        excluded = split.excluded[0]
        train = Counter(f.label for f in split.train)
        test = Counter(f.label for f in split.test)
        assert excluded not in train
        assert train == {c: 7 for c in "abc" if c != excluded}
        assert test["unknown"] == 10
        assert sum(test.values()) == 16


def test_splits_are_deterministic():
    flows = _labeled(["a", "b", "c"], 6)
    spec = SplitSpec(iteration_count=2, seed=1)
    a = make_splits(flows, spec)
    b = make_splits(flows, spec)
    assert [[id(f) for f in s.train] for s in a] == [[id(f) for f in s.train] for s in b]


def test_fixed_excluded_types_and_real_unknowns():
    flows = _labeled(["a", "b", "c", "unknown"], 4)
    splits = make_splits(flows, SplitSpec(iteration_count=2, excluded_types=["c"]))
    for split in splits:
        assert split.excluded == ("c",)
        assert Counter(f.label for f in split.train) == {"a": 3, "b": 3, "unknown": 3}
        assert Counter(f.label for f in split.test)["unknown"] == 4 + 1


def test_split_errors():
    with pytest.raises(DatasetError, match="at least 2"):
        make_splits(_labeled(["a", "b"], 1), SplitSpec(exclude_per_iteration=0))
    with pytest.raises(DatasetError, match="not present"):
        make_splits(_labeled(["a", "b", "c"], 3), SplitSpec(excluded_types=["zzz"]))
    with pytest.raises(DatasetError, match="fewer than 2"):
        make_splits(_labeled(["a", "b"], 3), SplitSpec(exclude_per_iteration=1))
    with pytest.raises(DatasetError, match="no label"):
        make_splits([coded_flow(0, None), coded_flow(0, None)], SplitSpec())


def test_exclusion_schedule_covers_all_classes():
    schedule = exclusion_schedule(["a", "b", "c", "d"], SplitSpec(iteration_count=4, seed=3))
    assert sorted(s[0] for s in schedule) == ["a", "b", "c", "d"]
    assert exclusion_schedule(["a", "b"], SplitSpec(iteration_count=2, exclude_per_iteration=0)) == [(), ()]


# --- Метрики ---

def test_macro_f1_example():
    confusion = confusion_counts(["a", "a", "b", "b"], ["a", "b", "b", "b"], ["a", "b"])
    assert (confusion["a"].tp, confusion["a"].fn, confusion["a"].fp) == (1, 1, 0)
    assert macro_f1(confusion) == pytest.approx(100 * (2 / 3 + 0.8) / 2)
    with pytest.raises(ValueError):
        macro_f1({})


def test_unknown_prediction_counts_as_miss_only():
    confusion = confusion_counts(["a", "b"], ["unknown", "b"], ["a", "b"])
    assert (confusion["a"].tp, confusion["a"].fn, confusion["a"].fp) == (0, 1, 0)
    assert confusion["b"].fp == 0


def test_build_report_unknown_rates():
    outcomes = [
        FlowOutcome("a", "a", 3, 0.1),
        FlowOutcome("b", "b", 5, 0.3),
        FlowOutcome("unknown", "unknown", 20, 1.0),
        FlowOutcome("unknown", "a", 2, 0.05),
        FlowOutcome("unknown", "unknown", 20, 1.0),
        FlowOutcome("unknown", "unknown", 20, 1.0),
    ]
    report = build_report(outcomes, ["a", "b"])
    assert report.accuracy == 100.0
    assert report.unknown_tpr == 75.0
    assert report.unknown_fpr == 25.0
    # пакеты до решения - по всем потокам, включая истинно неизвестные
    steps = [3, 5, 20, 2, 20, 20]
    assert report.packets_mean == pytest.approx(np.mean(steps))
    assert report.packets_std == pytest.approx(np.std(steps))
    assert report.time_mean == pytest.approx(np.mean([0.1, 0.3, 1.0, 0.05, 1.0, 1.0]))
    assert report.per_class["a"].packets_mean == 3.0
    assert report.known_flows == 2 and report.unknown_flows == 4
    assert report.steps_by_class["unknown"] == [2, 20, 20, 20]
    assert build_report(outcomes[:2], ["a", "b"]).unknown_fpr is None


# --- Оценка системы ---

def _coded_test_set(unknown=0):
    flows = []
    for i, label in enumerate(NAMES):
        flows.extend(coded_flow(i, label, n=6) for _ in range(4))
    flows.extend(coded_flow(0, "unknown", n=6) for _ in range(unknown))
    return flows


def test_always_correct_classifier():
    packet = SizeCodedClassifier(NAMES, feature_index=1, input_dim=3)
    slot = SizeCodedClassifier(NAMES, feature_index=2, input_dim=5)
    report = evaluate_system(packet, slot, PipelineConfig(), _coded_test_set(unknown=2))
    assert report.macro_f1 == pytest.approx(100.0)
    assert report.accuracy == 100.0
    assert report.packets_mean == 1.0
    assert report.time_mean == 0.0
    # «всегда правый» классификатор не умеет говорить unknown
    assert report.unknown_tpr == 0.0
    assert report.unknown_fpr == 100.0
    assert report.name == "fused"


def test_always_unknown_classifier():
    packet = SizeCodedClassifier(NAMES, feature_index=1, input_dim=3, say_unknown=True)
    cfg = PipelineConfig(packet_decider=DeciderConfig(c_unk=2))
    report = evaluate_system(packet, None, cfg, _coded_test_set(unknown=3), mode="packet")
    assert report.accuracy == 0.0
    assert report.macro_f1 == 0.0
    assert report.unknown_tpr == 100.0
    assert report.unknown_fpr == 0.0
    assert report.packets_mean == 2.0


def test_workers_and_disorder_do_not_change_coded_results():
    packet = SizeCodedClassifier(NAMES, feature_index=1, input_dim=3)
    slot = SizeCodedClassifier(NAMES, feature_index=2, input_dim=5)
    flows = _coded_test_set()
    serial = evaluate_system(packet, slot, PipelineConfig(), flows)
    parallel = evaluate_system(packet, slot, PipelineConfig(), flows, workers=4)
    assert report_json(serial) == report_json(parallel)
    # первый пакет не теряется, а код класса в нём
    noisy = evaluate_system(packet, slot, PipelineConfig(), flows, disorder=DisorderParams(drop_rate=0.3), seed=2)
    assert noisy.accuracy == 100.0


def test_slot_ablation_reports_slot_cost():
    packet = SizeCodedClassifier(NAMES, feature_index=1, input_dim=3)
    slot = SizeCodedClassifier(NAMES, feature_index=2, input_dim=5)
    report = evaluate_system(packet, slot, PipelineConfig(), _coded_test_set(), mode="slot")
    assert report.accuracy == 100.0
    assert report.time_mean == pytest.approx(0.05)
    assert report.name == "slot"


def test_fixed_input_baseline_on_separable_classes():
    factory = SyntheticFlowFactory(seed=0)
    train = factory.dataset(["uplink_heavy", "downlink_light"], 20)
    test = [factory.flow("uplink_heavy", 100 + i) for i in range(8)]
    test += [factory.flow("downlink_light", 100 + i) for i in range(8)]
    test.append(factory.flow("uplink_heavy", 200).with_label("unknown"))
    cfg = TrainConfig(hidden_dim=8, learning_rate=1e-2, batch_size=8)
    report = fixed_input_baseline("packet", 3, train, test, cfg, seed=0, epochs=30)
    assert report.name == "Pkt-3"
    assert report.accuracy >= 90.0
    assert report.packets_mean == 3.0
    assert report.unknown_fpr is None and report.unknown_tpr is None
    assert report.known_flows == 16


# --- Отчёты ---

def _report(f1, name="fused"):
    outcomes = [FlowOutcome("a", "a", 2, 0.1), FlowOutcome("b", "b" if f1 else "a", 4, 0.2)]
    report = build_report(outcomes, ["a", "b"], name=name)
    return report.model_copy(update={"macro_f1": f1})


def test_aggregate_mean_std():
    agg = aggregate_reports([_report(80.0), _report(90.0)])
    assert agg.loc["macro_f1", "mean"] == pytest.approx(85.0)
    assert agg.loc["macro_f1", "std"] == pytest.approx(5.0)
    table = evaluate_iterations([("fused", _report(80.0)), ("fused", _report(90.0)), ("Pkt-3", _report(70.0))])
    assert list(table["method"]) == ["fused", "Pkt-3"]
    row = table.set_index("method").loc["fused"]
    assert row["macro_f1"] == "85.00 ± 5.00"
    assert row["unknown_fpr"] == "-"


def test_write_report_files(tmp_path):
    report = _report(100.0)
    paths = write_report(report, str(tmp_path), stem="r")
    assert all(p.exists() for p in paths)
    data = json.loads(paths[0].read_text(encoding="utf-8"))
    assert data["name"] == "fused"
    table = pd.read_csv(paths[1])
    assert list(table.columns)[:3] == ["Method", "Macro F1", "Accuracy"]
    # повторная запись даёт те же байты
    first = paths[0].read_bytes()
    write_report(report, str(tmp_path), stem="r")
    assert paths[0].read_bytes() == first


def test_cdf_frame():
    frame = cdf_frame({"b": [3, 1], "a": [2]}, "steps")
    assert list(frame["class"]) == ["a", "b", "b"]
    assert list(frame["steps"]) == [2.0, 1.0, 3.0]
    assert list(frame["cdf"]) == [1.0, 0.5, 1.0]
    assert list(summary_table([_report(50.0)]).columns)[0] == "Method"


def test_synthetic_factory_is_deterministic():
    a = SyntheticFlowFactory(seed=3).flow("streaming", 7)
    b = SyntheticFlowFactory(seed=3).flow("streaming", 7)
    assert a.packets == b.packets
    assert a.rtt is not None
    with pytest.raises(ValueError):
        SyntheticFlowFactory().flow("nope", 0)
