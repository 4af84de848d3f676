# src/training/rl_trainer.py

"""
Обучение SeqClassifier как агента последовательных решений.

Эпизод - один поток: на шаге t агент видит префикс длины t и выбирает
действие 0..k (k - «ждать»). Награды:
  a = k           → wait_penalty
  a = true label  → positive_reward
  иначе           → negative_reward
Если агент всё ещё ждёт на шаге c_unk (или данные потока кончились), эпизод
завершается принудительно: positive_reward для потоков "unknown", иначе negative_reward.

Обновления - double Q-learning с приоритетным воспроизведением и Adam.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.config.settings import DeciderConfig, RewardConfig, TraceConfig, TrainConfig
from src.core.errors import CalibrationError, DatasetError
from src.core.log import get_logger
from src.features.representation import encode_flow
from src.ingest.trace_reader import FlowTrace
from src.models.base_classifier import BaseFlowClassifier
from src.models.decider import ClassifierSession, classify_sequence
from src.models.seq_classifier import SeqClassifier
from src.training.optim import Adam, clip_by_global_norm
from src.training.replay_buffer import ReplayBuffer, Transition

logger = get_logger(__name__)


# --- Награды ---

def reward(action: int, true_label: int, k: int, cfg: RewardConfig) -> float:
    if not 0 <= action <= k:
        raise ValueError(f"action {action} outside 0..{k}")
    if action == k:
        return cfg.wait_penalty
    if action == true_label:
        return cfg.positive_reward
    return cfg.negative_reward


def forced_terminal_reward(true_label: int, k: int, cfg: RewardConfig) -> float:
    return cfg.positive_reward if true_label == k else cfg.negative_reward


# --- Данные ---

@dataclass(frozen=True)
class LabeledSequence:
    flow_id: int
    features: np.ndarray  # (T, input_dim), T ≤ c_unk
    label: int            # индекс класса, k для unknown


def class_names_of(flows: Sequence[FlowTrace]) -> List[str]:
    return sorted({f.label for f in flows if f.label is not None and not f.is_unknown})


def encode_dataset(flows: Sequence[FlowTrace], granularity: str, class_names: List[str],
                   trace: TraceConfig, max_steps: int) -> List[LabeledSequence]:
    index = {name: i for i, name in enumerate(class_names)}
    k = len(class_names)
    out = []
    for i, flow in enumerate(flows):
        if flow.label is None:
            raise DatasetError(f"flow {i} ({flow.key}) has no label")
        label = k if flow.is_unknown else index.get(flow.label)
        if label is None:
            raise DatasetError(f"flow {i} has label '{flow.label}' outside the class set {class_names}")
        enc = encode_flow(flow, granularity, mtu=trace.mtu, delta=trace.slot_delta,
                          heavy_threshold=trace.heavy_threshold, ratio_cap=trace.ratio_cap,
                          max_steps=max_steps)
        out.append(LabeledSequence(i, enc.features, label))
    return out


def _pad(sequences: Sequence[np.ndarray], lengths: Sequence[int]) -> np.ndarray:
    """Склеивает префиксы в батч (B, T, D) с нулями в конце; причинность LSTM делает хвост безвредным."""
    T = max(lengths)
    D = sequences[0].shape[1]
    X = np.zeros((len(sequences), T, D))
    for b, (seq, n) in enumerate(zip(sequences, lengths)):
        X[b, :n] = seq[:n]
    return X


# --- Эпизоды ---

def _play(scores: np.ndarray, seq: LabeledSequence, eps: float, decider: DeciderConfig,
          rewards: RewardConfig, rng: np.random.Generator, granularity: Optional[str]) -> List[Transition]:
    k = scores.shape[1] - 1
    horizon = min(decider.c_unk, len(seq.features))
    transitions = []
    for t in range(1, horizon + 1):
        if rng.random() < eps:
            action = int(rng.integers(k + 1))
        else:
            action = int(np.argmax(scores[t - 1]))
        if action < k:
            r = reward(action, seq.label, k, rewards)
            terminal = True
        elif t == horizon:
            r = forced_terminal_reward(seq.label, k, rewards)
            terminal = True
        else:
            r = rewards.wait_penalty
            terminal = False
        transitions.append(Transition(seq.flow_id, t, action, r, terminal, granularity))
        if terminal:
            break
    return transitions


def run_episode(model: SeqClassifier, seq: LabeledSequence, eps: float, decider: DeciderConfig,
                rewards: RewardConfig, rng: np.random.Generator) -> List[Transition]:
    """
    Один эпизод: ε-жадный выбор действия на каждом шаге (сначала rng.random(),
    при исследовании rng.integers(k+1)). Не длиннее c_unk переходов.
    """
    if len(seq.features) == 0:
        raise ValueError("episode needs at least one data point")
    horizon = min(decider.c_unk, len(seq.features))
    scores, _ = model.forward_batch(seq.features[None, :horizon])
    return _play(scores[0], seq, eps, decider, rewards, rng, model.granularity)


def rollout_batch(model: SeqClassifier, batch: Sequence[LabeledSequence], eps: float,
                  decider: DeciderConfig, rewards: RewardConfig,
                  rng: np.random.Generator) -> List[List[Transition]]:
    """То же, что run_episode по каждому потоку по порядку, но с одним прямым проходом на батч."""
    lengths = [min(decider.c_unk, len(s.features)) for s in batch]
    scores, _ = model.forward_batch(_pad([s.features for s in batch], lengths))
    return [_play(scores[b, :n], s, eps, decider, rewards, rng, model.granularity)
            for b, (s, n) in enumerate(zip(batch, lengths))]


# --- Функция потерь ---

@dataclass
class LossResult:
    loss: float
    td_errors: np.ndarray
    grads: Dict[str, np.ndarray] = field(default_factory=dict)


def double_q_loss(online: SeqClassifier, target: SeqClassifier, batch: Sequence[Transition], gamma: float,
                  sequences: Dict[int, np.ndarray], weights: Optional[np.ndarray] = None,
                  loss: str = "huber") -> LossResult:
    """
    y = r для терминальных переходов, иначе y = r + γ·Q_target(s′, argmax_a Q_online(s′, a)).
    Потеря - взвешенное среднее Huber(y − Q_online(s, a)) (или ½·квадрат).
    y не дифференцируется; градиент идёт только в Q_online(s, a).

    :param sequences: flow_id → матрица признаков потока
    """
    if not batch:
        raise ValueError("double_q_loss needs a non-empty batch")
    n = len(batch)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)

    rows: Dict[int, int] = {}
    needed: List[int] = []
    for tr in batch:
        length = tr.prefix_len if tr.terminal else tr.prefix_len + 1
        if tr.flow_id not in rows:
            rows[tr.flow_id] = len(rows)
            needed.append(length)
        else:
            needed[rows[tr.flow_id]] = max(needed[rows[tr.flow_id]], length)
    ordered = sorted(rows, key=rows.get)
    X = _pad([sequences[fid] for fid in ordered], needed)

    q_online, cache = online.forward_batch(X)
    q_target = None
    if any(not tr.terminal for tr in batch):
        q_target, _ = target.forward_batch(X)

    td = np.empty(n)
    d_scores = np.zeros_like(q_online)
    total = 0.0
    for j, tr in enumerate(batch):
        r = rows[tr.flow_id]
        q = q_online[r, tr.prefix_len - 1, tr.action]
        y = tr.reward
        if not tr.terminal:
            best = int(np.argmax(q_online[r, tr.prefix_len]))
            y += gamma * q_target[r, tr.prefix_len, best]
        td[j] = y - q
        if loss == "huber":
            a = abs(td[j])
            total += w[j] * (0.5 * td[j] * td[j] if a <= 1.0 else a - 0.5)
            d_scores[r, tr.prefix_len - 1, tr.action] += -w[j] * float(np.clip(td[j], -1.0, 1.0)) / n
        else:
            total += w[j] * 0.5 * td[j] * td[j]
            d_scores[r, tr.prefix_len - 1, tr.action] += -w[j] * td[j] / n
    return LossResult(loss=total / n, td_errors=td, grads=online.backward(cache, d_scores))


# --- Калибровка порога ---

def nearest_rank_percentile(values: Sequence[float], percentile: float) -> float:
    if not values:
        raise CalibrationError("no final predictions to calibrate")
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


def calibrate_threshold(model: BaseFlowClassifier, train_flows: Sequence[FlowTrace], cfg: DeciderConfig,
                        trace: TraceConfig = TraceConfig(), percentile: float = 90.0,
                        mode: str = "final", granularity: Optional[str] = None) -> float:
    """
    Порог T_p/T_t: перцентиль (nearest-rank) уверенностей классификатора на
    обучающих потоках. mode="final" - только финальные выдачи,
    "all_steps" - максимальная вероятность на каждом шаге.
    """
    if len(train_flows) < 10:
        raise CalibrationError(f"calibration needs at least 10 flows, got {len(train_flows)}")
    granularity = granularity or getattr(model, "granularity", None) or "packet"
    values: List[float] = []
    for flow in train_flows:
        enc = encode_flow(flow, granularity, mtu=trace.mtu, delta=trace.slot_delta,
                          heavy_threshold=trace.heavy_threshold, ratio_cap=trace.ratio_cap,
                          max_steps=cfg.c_unk)
        if mode == "all_steps":
            session = ClassifierSession(model, cfg)
            for x, t in zip(enc.features, enc.times):
                res = session.push(x, float(t))
                values.append(float(session.last_confidence.max()))
                if res.final:
                    break
        else:
            res = classify_sequence(model, enc.features, cfg, times=enc.times)
            if res.final:
                values.append(res.confidence)
    threshold = nearest_rank_percentile(values, percentile)
    logger.info(f"[Trainer] Calibrated {granularity} threshold {threshold:.4f} "
                f"({mode}, p{percentile:g} over {len(values)} confidences)")
    return threshold


# --- Цикл обучения ---

EpochCallback = Callable[[Dict[str, Optional[float]]], None]


class DQNTrainer:
    """
    Эпоха: потоки перемешиваются, по batch_size потоков проигрываются эпизоды,
    переходы кладутся в буфер, затем updates_per_rollout градиентных шагов.
    """

    def __init__(self, flows: Sequence[FlowTrace], granularity: str, train_cfg: TrainConfig,
                 reward_cfg: RewardConfig, decider_cfg: DeciderConfig, trace_cfg: TraceConfig = TraceConfig(),
                 seed: int = 0, eval_flows: Optional[Sequence[FlowTrace]] = None):
        self.class_names = class_names_of(flows)
        if len(self.class_names) < 2:
            raise DatasetError(f"training needs at least 2 known classes, got {self.class_names}")
        self.granularity = granularity
        self.cfg = train_cfg
        self.rewards = reward_cfg
        self.decider = decider_cfg
        self.trace = trace_cfg
        self.seed = seed
        self.data = encode_dataset(flows, granularity, self.class_names, trace_cfg, decider_cfg.c_unk)
        self.sequences = {s.flow_id: s.features for s in self.data}
        self.eval_flows = list(eval_flows) if eval_flows is not None else list(flows)

        input_dim = self.data[0].features.shape[1]
        self.online = SeqClassifier.create(input_dim, train_cfg.hidden_dim, self.class_names,
                                           np.random.default_rng([seed, 1]), num_layers=train_cfg.num_layers,
                                           granularity=granularity)
        self.target = self.online.copy()
        self.optimizer = Adam(self.online.params, lr=train_cfg.learning_rate)
        self.replay = ReplayBuffer(train_cfg.replay_capacity, train_cfg.priority_exponent, train_cfg.priority_floor)
        self.rollout_rng = np.random.default_rng([seed, 2])
        self.sample_rng = np.random.default_rng([seed, 3])
        self.order_rng = np.random.default_rng([seed, 4])
        self.total_episodes = train_cfg.max_epochs * len(self.data)
        self.episodes_done = 0
        self.grad_steps = 0

    def epsilon(self) -> float:
        horizon = self.cfg.epsilon_decay_fraction * self.total_episodes
        frac = min(1.0, self.episodes_done / horizon) if horizon > 0 else 1.0
        return self.cfg.epsilon_start + (self.cfg.epsilon_end - self.cfg.epsilon_start) * frac

    def importance_exponent(self) -> float:
        frac = min(1.0, self.episodes_done / max(self.total_episodes, 1))
        start, end = self.cfg.importance_exponent_start, self.cfg.importance_exponent_end
        return start + (end - start) * frac

    def gradient_step(self) -> float:
        batch, weights, idx = self.replay.sample(self.cfg.batch_size, self.sample_rng, self.importance_exponent())
        result = double_q_loss(self.online, self.target, batch, self.cfg.gamma, self.sequences,
                               weights=weights, loss=self.cfg.loss)
        clip_by_global_norm(result.grads, self.cfg.grad_clip)
        self.optimizer.step(self.online.params, result.grads)
        self.replay.update_priorities(idx, result.td_errors)
        self.grad_steps += 1
        if self.grad_steps % self.cfg.target_sync_interval == 0:
            self.target = self.online.copy()
        return result.loss

    def eval_accuracy(self) -> float:
        correct = 0
        for flow in self.eval_flows:
            enc = encode_flow(flow, self.granularity, mtu=self.trace.mtu, delta=self.trace.slot_delta,
                              heavy_threshold=self.trace.heavy_threshold, ratio_cap=self.trace.ratio_cap,
                              max_steps=self.decider.c_unk)
            res = classify_sequence(self.online, enc.features, self.decider, times=enc.times)
            correct += int(res.label == flow.label)
        return 100.0 * correct / max(len(self.eval_flows), 1)

    def run_epoch(self, epoch: int) -> Dict[str, Optional[float]]:
        order = self.order_rng.permutation(len(self.data))
        returns: List[float] = []
        losses: List[float] = []
        for start in range(0, len(order), self.cfg.batch_size):
            chunk = [self.data[int(i)] for i in order[start:start + self.cfg.batch_size]]
            episodes = rollout_batch(self.online, chunk, self.epsilon(), self.decider, self.rewards,
                                     self.rollout_rng)
            for ep in episodes:
                self.replay.extend(ep)
                returns.append(sum(t.reward for t in ep))
            self.episodes_done += len(chunk)
            for _ in range(self.cfg.updates_per_rollout):
                losses.append(self.gradient_step())
        is_eval = (epoch + 1) % self.cfg.eval_interval == 0 or epoch + 1 == self.cfg.max_epochs
        return {
            "epoch": epoch + 1,
            "mean_reward": float(np.mean(returns)) if returns else 0.0,
            "mean_loss": float(np.mean(losses)) if losses else 0.0,
            "eval_accuracy": self.eval_accuracy() if is_eval else None,
        }

    def fit(self, on_epoch: Optional[EpochCallback] = None) -> SeqClassifier:
        logger.info(f"[Trainer] {self.granularity}: {len(self.data)} flows, classes {self.class_names}, "
                    f"{self.cfg.max_epochs} epochs")
        for epoch in range(self.cfg.max_epochs):
            stats = self.run_epoch(epoch)
            acc = "" if stats["eval_accuracy"] is None else f", eval acc {stats['eval_accuracy']:.2f}%"
            logger.info(f"[Trainer] {self.granularity} epoch {stats['epoch']}: reward {stats['mean_reward']:.4f}, "
                        f"loss {stats['mean_loss']:.5f}, eps {self.epsilon():.3f}{acc}")
            if on_epoch is not None:
                on_epoch(stats)
        return self.online


def train(dataset: Sequence[FlowTrace], granularity: str, train_cfg: TrainConfig, reward_cfg: RewardConfig,
          decider_cfg: DeciderConfig, trace_cfg: TraceConfig = TraceConfig(), seed: int = 0,
          on_epoch: Optional[EpochCallback] = None,
          eval_flows: Optional[Sequence[FlowTrace]] = None) -> SeqClassifier:
    trainer = DQNTrainer(dataset, granularity, train_cfg, reward_cfg, decider_cfg, trace_cfg, seed, eval_flows)
    return trainer.fit(on_epoch)

