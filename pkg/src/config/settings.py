# src/config/settings.py

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.core.errors import ConfigError

DEFAULT_CONFIG_PATH = Path(__file__).with_name("run.json")


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- Представление потока ---

class TraceConfig(_Frozen):
    mtu: int = Field(1500, gt=0, description="Нормировка размера payload")
    heavy_threshold: int = Field(1200, ge=0, description="heavy: payload_len > порога")
    slot_delta: float = Field(0.05, gt=0, description="Ширина слота, секунды")
    ratio_cap: float = Field(100.0, gt=0, description="Верхняя граница up/down")


# --- Классификатор ---

class DeciderConfig(_Frozen):
    t_unk: float = Field(0.8, gt=0.0, lt=1.0)
    c_unk: int = Field(20, ge=1)


class RewardConfig(_Frozen):
    positive_reward: float = 1.0
    negative_reward: float = -1.0
    wait_penalty: float = -0.03

    @model_validator(mode="after")
    def _check_signs(self):
        if not (self.wait_penalty < 0 < self.positive_reward):
            raise ValueError("wait_penalty < 0 < positive_reward is required")
        if self.negative_reward >= 0:
            raise ValueError("negative_reward must be < 0")
        return self


class TrainConfig(_Frozen):
    learning_rate: float = Field(3e-4, gt=0)
    max_epochs: int = Field(200, ge=1)
    batch_size: int = Field(64, ge=1)
    gamma: float = Field(1.0, ge=0.0, le=1.0)
    target_sync_interval: int = Field(500, ge=1)
    epsilon_start: float = Field(1.0, ge=0.0, le=1.0)
    epsilon_end: float = Field(0.05, ge=0.0, le=1.0)
    epsilon_decay_fraction: float = Field(0.5, gt=0.0, le=1.0)
    replay_capacity: int = Field(100_000, ge=1)
    priority_exponent: float = Field(0.6, ge=0.0)
    importance_exponent_start: float = Field(0.4, ge=0.0, le=1.0)
    importance_exponent_end: float = Field(1.0, ge=0.0, le=1.0)
    priority_floor: float = Field(1e-6, gt=0.0)
    updates_per_rollout: int = Field(2, ge=1)
    hidden_dim: int = Field(128, ge=1)
    num_layers: int = Field(1, ge=1)
    loss: Literal["huber", "squared"] = "huber"
    grad_clip: Optional[float] = Field(10.0, gt=0.0)
    eval_interval: int = Field(10, ge=1)
    calibration_percentile: float = Field(90.0, gt=0.0, le=100.0)
    calibration_mode: Literal["final", "all_steps"] = "final"


# --- Выбор результата ---

class SelectionConfig(_Frozen):
    t_p: float = Field(0.9, gt=0.0, lt=1.0)
    t_t: float = Field(0.9, gt=0.0, lt=1.0)
    delta_select: float = Field(0.05, gt=0.0)
    agreement_bonus: float = Field(0.1, ge=0.0)


# --- Аугментация ---

class AugmentParams(_Frozen):
    """
    Параметры одной аугментации. alpha_attr=None означает «тянуть из диапазона режима».
    """
    mode: Literal["strong_unknown", "weak_balance"] = "strong_unknown"
    alpha_attr: Optional[float] = Field(None, ge=0.0, le=1.0)
    alpha_ps: float = Field(0.2, ge=0.0, le=1.0)
    alpha_ts: float = Field(0.2, ge=0.0, le=1.0)
    alpha_dir: float = Field(0.2, ge=0.0, le=1.0)
    mtu: int = Field(1500, gt=0)

    def attr_range(self) -> Tuple[float, float]:
        return (0.6, 0.9) if self.mode == "strong_unknown" else (0.0, 0.2)


class DisorderParams(_Frozen):
    drop_mean: float = Field(0.05, ge=0.0, lt=1.0)
    drop_std: float = Field(0.035, ge=0.0)
    fallback_rtt: float = Field(0.05, ge=0.0)
    drop_rate: Optional[float] = Field(None, ge=0.0, lt=1.0, description="Фиксированная доля потерь (для тестов)")


class AugmentConfig(_Frozen):
    alpha_ps: float = Field(0.2, ge=0.0, le=1.0)
    alpha_ts: float = Field(0.2, ge=0.0, le=1.0)
    alpha_dir: float = Field(0.2, ge=0.0, le=1.0)
    pseudo_unknown_ratio: float = Field(0.25, ge=0.0)
    unknown_mix: Literal["supplement", "replace"] = "supplement"
    balance: bool = True

    def params(self, mode: str, mtu: int) -> AugmentParams:
        return AugmentParams(mode=mode, alpha_ps=self.alpha_ps, alpha_ts=self.alpha_ts,
                             alpha_dir=self.alpha_dir, mtu=mtu)


# --- Оценка ---

class SplitSpec(_Frozen):
    train_fraction: float = Field(0.7, gt=0.0, lt=1.0)
    excluded_types: List[str] = Field(default_factory=list)
    exclude_per_iteration: int = Field(1, ge=0)
    iteration_count: int = Field(10, ge=1)
    seed: int = 0


class PathsConfig(_Frozen):
    input: Optional[str] = None
    output: Optional[str] = None
    models: Optional[str] = None


class RunConfig(_Frozen):
    trace: TraceConfig = TraceConfig()
    packet_decider: DeciderConfig = DeciderConfig(c_unk=20)
    slot_decider: DeciderConfig = DeciderConfig(c_unk=20)
    reward: RewardConfig = RewardConfig()
    train: TrainConfig = TrainConfig()
    selection: SelectionConfig = SelectionConfig()
    augment: AugmentConfig = AugmentConfig()
    disorder: Optional[DisorderParams] = None
    split: SplitSpec = SplitSpec()
    paths: PathsConfig = PathsConfig()
    granularity: Literal["packet", "slot", "both"] = "both"
    seed: int = 0
    workers: int = Field(1, ge=1)

    def snapshot(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        field = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{field}: {err['msg']}")
    return "; ".join(parts)


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Собирает RunConfig: флаги > файл > значения по умолчанию.

    :param path: JSON-файл конфигурации; None - только значения по умолчанию
    :param overrides: вложенный словарь переопределений из CLI
    """
    data: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config: file not found: {path}")
        try:
            with open(p, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON in {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
    if overrides:
        data = _deep_merge(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"config: {_format_validation_error(e)}") from e
