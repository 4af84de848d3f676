# src/pipeline.py

"""
Оркестрация поверх модулей: обучение пары моделей с калибровкой порогов,
загрузка моделей из каталога и полный протокол оценки по итерациям.
CLI остаётся тонкой обёрткой над этими функциями.
"""

import json
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from src.config.settings import RunConfig
from src.core.errors import ModelFormatError
from src.core.log import get_logger
from src.evaluation.evaluate import evaluate_system, fixed_input_baseline
from src.evaluation.metrics import MetricsReport
from src.evaluation.splits import make_splits
from src.features.augmentation import build_training_set
from src.ingest.trace_reader import FlowTrace
from src.models.model_io import ModelCheckpoint, load_model, save_model
from src.selection.flow_runner import PipelineConfig, check_class_sets
from src.training.rl_trainer import calibrate_threshold, train

logger = get_logger(__name__)

MODEL_FILES = {"packet": "packet.ffm", "slot": "slot.ffm"}


def granularities(cfg: RunConfig) -> List[str]:
    return ["packet", "slot"] if cfg.granularity == "both" else [cfg.granularity]


def decider_for(cfg: RunConfig, granularity: str):
    return cfg.packet_decider if granularity == "packet" else cfg.slot_decider


def train_models(train_flows: Sequence[FlowTrace], cfg: RunConfig, seed: Optional[int] = None,
                 log_sink: Optional[Callable[[str, dict], None]] = None) -> Dict[str, ModelCheckpoint]:
    """
    Обучает модели выбранных гранулярностей на обучающем наборе с аугментацией
    и калибрует для каждой порог приёма на реальных обучающих потоках.
    """
    seed = cfg.seed if seed is None else seed
    dataset = build_training_set(train_flows, cfg.augment, cfg.trace.mtu, seed)
    checkpoints = {}
    for g in granularities(cfg):
        decider = decider_for(cfg, g)
        on_epoch = (lambda stats, g=g: log_sink(g, stats)) if log_sink else None
        model = train(dataset, g, cfg.train, cfg.reward, decider, cfg.trace, seed,
                      on_epoch=on_epoch, eval_flows=train_flows)
        threshold = calibrate_threshold(model, train_flows, decider, cfg.trace,
                                        cfg.train.calibration_percentile, cfg.train.calibration_mode)
        checkpoints[g] = ModelCheckpoint(model, decider, threshold, cfg.trace)
    return checkpoints


def save_models(checkpoints: Dict[str, ModelCheckpoint], models_dir: str) -> List[Path]:
    paths = []
    for g, ckpt in checkpoints.items():
        path = Path(models_dir) / MODEL_FILES[g]
        save_model(ckpt, str(path))
        paths.append(path)
    return paths


def load_models(models_dir: str, cfg: RunConfig) -> Dict[str, ModelCheckpoint]:
    checkpoints = {}
    for g in granularities(cfg):
        path = Path(models_dir) / MODEL_FILES[g]
        if path.exists():
            checkpoints[g] = load_model(str(path))
    if not checkpoints:
        raise ModelFormatError(f"no model files ({', '.join(MODEL_FILES.values())}) found in {models_dir}")
    packet, slot = checkpoints.get("packet"), checkpoints.get("slot")
    check_class_sets(packet.model if packet else None, slot.model if slot else None)
    return checkpoints


def pipeline_config(cfg: RunConfig, checkpoints: Dict[str, ModelCheckpoint]) -> PipelineConfig:
    """Пороги T_p/T_t и параметры решателя берутся из чекпоинтов, если они там есть."""
    update = {}
    if "packet" in checkpoints and checkpoints["packet"].threshold is not None:
        update["t_p"] = checkpoints["packet"].threshold
    if "slot" in checkpoints and checkpoints["slot"].threshold is not None:
        update["t_t"] = checkpoints["slot"].threshold
    # калиброванный порог может быть ровно 1.0; SelectionConfig допускает только (0, 1)
    update = {k: min(v, 1.0 - 1e-9) for k, v in update.items()}
    selection = cfg.selection.model_copy(update=update)
    return PipelineConfig(
        packet_decider=checkpoints["packet"].decider if "packet" in checkpoints else cfg.packet_decider,
        slot_decider=checkpoints["slot"].decider if "slot" in checkpoints else cfg.slot_decider,
        selection=selection,
        trace=cfg.trace,
    )


def evaluate_checkpoints(checkpoints: Dict[str, ModelCheckpoint], cfg: RunConfig,
                         test_flows: Sequence[FlowTrace], seed: Optional[int] = None) -> List[MetricsReport]:
    """Слитая система и, если обе модели есть, абляции packet-only и slot-only."""
    seed = cfg.seed if seed is None else seed
    pcfg = pipeline_config(cfg, checkpoints)
    packet = checkpoints["packet"].model if "packet" in checkpoints else None
    slot = checkpoints["slot"].model if "slot" in checkpoints else None
    modes = ["fused", "packet", "slot"] if packet is not None and slot is not None \
        else ["packet" if packet is not None else "slot"]
    return [
        evaluate_system(packet, slot, pcfg, test_flows, disorder=cfg.disorder, seed=seed,
                        mode=mode, workers=cfg.workers, name=mode)
        for mode in modes
    ]


def run_protocol(flows: Sequence[FlowTrace], cfg: RunConfig, baselines: Sequence[int] = (),
                 log_sink: Optional[Callable[[str, dict], None]] = None) -> List[Tuple[int, List[MetricsReport]]]:
    """Итерации разбиения: обучение, калибровка, оценка; плюс базовые линии с фиксированным входом."""
    results = []
    for it, split in enumerate(make_splits(flows, cfg.split)):
        seed = cfg.seed + it
        logger.info(f"[Protocol] Iteration {it + 1}/{cfg.split.iteration_count}, excluded {list(split.excluded)}")
        sink = (lambda g, stats, it=it: log_sink(g, {"iteration": it, **stats})) if log_sink else None
        checkpoints = train_models(split.train, cfg, seed, sink)
        reports = evaluate_checkpoints(checkpoints, cfg, split.test, seed)
        for n in baselines:
            for g in granularities(cfg):
                reports.append(fixed_input_baseline(g, n, split.train, split.test, cfg.train, cfg.trace, seed))
        results.append((it, reports))
    return results


def write_jsonl(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
