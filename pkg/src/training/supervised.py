# src/training/supervised.py

"""
Базовая линия с фиксированным входом: тот же рекуррентный кодировщик, но без
класса "unknown" и без раннего решения. Модель читает ровно n точек данных
(или весь поток, если он короче) и обучается кросс-энтропией по k классам.
"""

from typing import List, Optional, Sequence

import numpy as np

from src.config.settings import TraceConfig, TrainConfig
from src.core.errors import DatasetError
from src.core.log import get_logger
from src.features.representation import encode_flow
from src.ingest.trace_reader import FlowTrace
from src.models.decider import soft_confidence
from src.models.seq_classifier import SeqClassifier
from src.training.optim import Adam, clip_by_global_norm
from src.training.rl_trainer import class_names_of

logger = get_logger(__name__)


def _encode_fixed(flows: Sequence[FlowTrace], granularity: str, n: int, trace: TraceConfig) -> List[np.ndarray]:
    return [
        encode_flow(f, granularity, mtu=trace.mtu, delta=trace.slot_delta, heavy_threshold=trace.heavy_threshold,
                    ratio_cap=trace.ratio_cap, max_steps=n).features
        for f in flows
    ]


def _batch(features: Sequence[np.ndarray]):
    lengths = np.array([len(x) for x in features])
    X = np.zeros((len(features), lengths.max(), features[0].shape[1]))
    for b, x in enumerate(features):
        X[b, :len(x)] = x
    return X, lengths


def train_fixed_input(flows: Sequence[FlowTrace], granularity: str, n: int, cfg: TrainConfig,
                      trace: TraceConfig = TraceConfig(), seed: int = 0,
                      epochs: Optional[int] = None) -> SeqClassifier:
    """Обучает классификатор на первых n точках каждого известного потока."""
    if n < 1:
        raise ValueError("fixed input length n must be ≥ 1")
    known = [f for f in flows if f.label is not None and not f.is_unknown]
    class_names = class_names_of(known)
    if len(class_names) < 2:
        raise DatasetError(f"baseline needs at least 2 known classes, got {class_names}")
    index = {c: i for i, c in enumerate(class_names)}
    features = _encode_fixed(known, granularity, n, trace)
    labels = np.array([index[f.label] for f in known])

    model = SeqClassifier.create(features[0].shape[1], cfg.hidden_dim, class_names,
                                 np.random.default_rng([seed, 11]), num_layers=cfg.num_layers,
                                 has_unknown=False, granularity=granularity)
    optimizer = Adam(model.params, lr=cfg.learning_rate)
    rng = np.random.default_rng([seed, 12])
    epochs = epochs or cfg.max_epochs
    for epoch in range(epochs):
        order = rng.permutation(len(known))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            X, lengths = _batch([features[i] for i in idx])
            scores, cache = model.forward_batch(X)
            rows = np.arange(len(idx))
            last = scores[rows, lengths - 1]
            probs = np.exp(last - last.max(axis=1, keepdims=True))
            probs /= probs.sum(axis=1, keepdims=True)
            y = labels[idx]
            losses.append(float(-np.mean(np.log(probs[rows, y] + 1e-12))))
            d_last = probs.copy()
            d_last[rows, y] -= 1.0
            d_scores = np.zeros_like(scores)
            d_scores[rows, lengths - 1] = d_last / len(idx)
            grads = model.backward(cache, d_scores)
            clip_by_global_norm(grads, cfg.grad_clip)
            optimizer.step(model.params, grads)
        logger.debug(f"[Baseline] {granularity}-{n} epoch {epoch + 1}: loss {np.mean(losses):.5f}")
    logger.info(f"[Baseline] Trained {granularity}-{n} on {len(known)} flows, {epochs} epochs")
    return model


def predict_fixed_input(model: SeqClassifier, flow: FlowTrace, n: int, trace: TraceConfig = TraceConfig()):
    """(метка, уверенность, число шагов) после чтения min(n, длина) точек данных."""
    x = _encode_fixed([flow], model.granularity, n, trace)[0]
    scores, _ = model.forward_batch(x[None])
    conf = soft_confidence(scores[0, -1])
    best = int(np.argmax(conf))
    return model.class_names[best], float(conf[best]), len(x)
