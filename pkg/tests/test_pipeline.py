# tests/test_pipeline.py

import pytest

from src.config.settings import DisorderParams, RunConfig, SplitSpec, load_run_config
from src.core.errors import ClassSetMismatchError, ModelFormatError
from src.evaluation.splits import make_splits
from src.evaluation.synthetic import SyntheticFlowFactory
from src.models.model_io import encode_model
from src.pipeline import (evaluate_checkpoints, granularities, load_models, pipeline_config, save_models,
                          train_models)

TINY = {
    "packet_decider": {"c_unk": 3},
    "slot_decider": {"c_unk": 3},
    "train": {"max_epochs": 2, "hidden_dim": 4, "batch_size": 16, "replay_capacity": 200,
              "calibration_mode": "all_steps"},
}


def _flows(seed=0, per_class=10):
    return SyntheticFlowFactory(seed=seed).dataset(["uplink_heavy", "downlink_light"], per_class)


def test_granularities():
    assert granularities(RunConfig()) == ["packet", "slot"]
    assert granularities(load_run_config(None, {"granularity": "slot"})) == ["slot"]


def test_training_is_reproducible():
    cfg = load_run_config(None, TINY)
    a = train_models(_flows(), cfg, seed=3)
    b = train_models(_flows(), cfg, seed=3)
    assert set(a) == {"packet", "slot"}
    for g in a:
        assert encode_model(a[g]) == encode_model(b[g])
        assert 0.0 < a[g].threshold <= 1.0
        assert a[g].granularity == g


def test_save_load_and_evaluate(tmp_path):
    cfg = load_run_config(None, TINY)
    checkpoints = train_models(_flows(), cfg, seed=0)
    save_models(checkpoints, str(tmp_path))
    loaded = load_models(str(tmp_path), cfg)
    assert set(loaded) == {"packet", "slot"}
    pcfg = pipeline_config(cfg, loaded)
    assert pcfg.selection.t_p == pytest.approx(min(loaded["packet"].threshold, 1.0 - 1e-9))
    reports = evaluate_checkpoints(loaded, cfg, _flows(seed=1, per_class=3))
    assert [r.name for r in reports] == ["fused", "packet", "slot"]
    assert all(r.known_flows == 6 for r in reports)


def test_load_models_errors(tmp_path):
    cfg = load_run_config(None, TINY)
    with pytest.raises(ModelFormatError):
        load_models(str(tmp_path), cfg)
    checkpoints = train_models(_flows(), cfg, seed=0)
    other = SyntheticFlowFactory(seed=0).dataset(["chat", "voip"], 10)
    slot_only = load_run_config(None, {**TINY, "granularity": "slot"})
    mismatched = {"packet": checkpoints["packet"], **train_models(other, slot_only, seed=0)}
    save_models(mismatched, str(tmp_path))
    with pytest.raises(ClassSetMismatchError):
        load_models(str(tmp_path), cfg)


SIGNATURE_CLASSES = ["streaming", "chat", "transfer", "control"]


def _held_out_split(per_class, seed=0):
    # три известных типа + "control" как неизвестный, которого нет в обучении
    flows = SyntheticFlowFactory(seed=seed).dataset(SIGNATURE_CLASSES, per_class)
    (split,) = make_splits(flows, SplitSpec(excluded_types=["control"], iteration_count=1, seed=seed))
    return split


@pytest.mark.slow
def test_learns_known_classes_and_rejects_held_out_type():
    split = _held_out_split(per_class=500)
    cfg = RunConfig()
    checkpoints = train_models(split.train, cfg, seed=0)
    fused = evaluate_checkpoints(checkpoints, cfg, split.test)[0]
    assert fused.name == "fused"
    assert fused.accuracy >= 90.0
    assert fused.unknown_tpr >= 80.0
    assert fused.unknown_fpr <= 10.0
    assert fused.packets_mean <= cfg.packet_decider.c_unk / 2


@pytest.mark.slow
def test_fused_accuracy_drops_no_more_than_packet_only_under_disorder():
    split = _held_out_split(per_class=100)
    cfg = load_run_config(None, {"train": {"max_epochs": 60, "hidden_dim": 32, "learning_rate": 3e-3,
                                           "batch_size": 32, "target_sync_interval": 100,
                                           "replay_capacity": 20000}})
    checkpoints = train_models(split.train, cfg, seed=0)
    # потери и переупорядочивание - только в тестовых данных
    clean = {r.name: r for r in evaluate_checkpoints(checkpoints, cfg, split.test)}
    lossy_cfg = cfg.model_copy(update={"disorder": DisorderParams()})
    lossy = {r.name: r for r in evaluate_checkpoints(checkpoints, lossy_cfg, split.test)}
    fused_drop = clean["fused"].accuracy - lossy["fused"].accuracy
    packet_drop = clean["packet"].accuracy - lossy["packet"].accuracy
    assert fused_drop <= packet_drop
