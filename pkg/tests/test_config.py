# tests/test_config.py

import json

import pytest

from src.config.settings import DEFAULT_CONFIG_PATH, RewardConfig, RunConfig, load_run_config
from src.core.errors import ConfigError


def test_defaults():
    cfg = load_run_config()
    assert cfg.trace.slot_delta == 0.05
    assert cfg.packet_decider.c_unk == 20
    assert cfg.selection.agreement_bonus == 0.1
    assert cfg.disorder is None
    assert cfg.granularity == "both"


def test_bundled_config_matches_defaults():
    assert load_run_config(str(DEFAULT_CONFIG_PATH)) == RunConfig()


def test_file_then_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3, "train": {"hidden_dim": 16}, "selection": {"t_p": 0.8}}), encoding="utf-8")
    cfg = load_run_config(str(path), {"seed": 7, "train": {"max_epochs": 2}})
    assert cfg.seed == 7
    assert cfg.train.hidden_dim == 16
    assert cfg.train.max_epochs == 2
    assert cfg.selection.t_p == 0.8
    assert cfg.selection.t_t == 0.9


def test_invalid_values_name_the_field(tmp_path):
    with pytest.raises(ConfigError, match="selection.t_p"):
        load_run_config(None, {"selection": {"t_p": 1.5}})
    with pytest.raises(ConfigError, match="packet_decider.c_unk"):
        load_run_config(None, {"packet_decider": {"c_unk": 0}})
    with pytest.raises(ConfigError, match="bogus"):
        load_run_config(None, {"bogus": 1})


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_run_config(str(broken))


def test_reward_sign_rules():
    with pytest.raises(ValueError):
        RewardConfig(wait_penalty=0.1)
    with pytest.raises(ValueError):
        RewardConfig(negative_reward=0.5)


def test_snapshot_roundtrips(tmp_path):
    cfg = load_run_config(None, {"disorder": {"drop_rate": 0.1}, "seed": 4})
    path = tmp_path / "run_config.json"
    path.write_text(cfg.snapshot(), encoding="utf-8")
    assert load_run_config(str(path)) == cfg
