# src/models/seq_classifier.py

"""
Рекуррентный классификатор потока: LSTM-ячейки (одна по умолчанию) и линейная
голова inference на каждом шаге, k+1 выходов (последний - "unknown").

Параметры хранятся в float64; порядок гейтов в сложенных матрицах: i, f, o, g
(input, forget, output, candidate).
  z = W_x·x + W_h·h + b
  i, f, o = σ(z_i), σ(z_f), σ(z_o);  g = tanh(z_g)
  c' = f·c + i·g;  h' = o·tanh(c')
Обучение идёт через forward_batch/backward (BPTT по дополненным нулями батчам).
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.models.base_classifier import BaseFlowClassifier

GATES = 4


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh-форма не переполняется на больших |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class RecurrentState:
    hidden: np.ndarray  # (num_layers, hidden_dim)
    cell: np.ndarray

    @property
    def features(self) -> np.ndarray:
        return self.hidden[-1]


@dataclass
class _LayerCache:
    inputs: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tc: np.ndarray


@dataclass
class ForwardCache:
    layers: List[_LayerCache] = field(default_factory=list)
    top: Optional[np.ndarray] = None


class SeqClassifier(BaseFlowClassifier):
    def __init__(self, input_dim: int, hidden_dim: int, class_names: List[str],
                 params: Dict[str, np.ndarray], num_layers: int = 1, has_unknown: bool = True,
                 granularity: Optional[str] = None):
        self._input_dim = input_dim
        self.hidden_dim = hidden_dim
        self._class_names = list(class_names)
        self.num_layers = num_layers
        self.has_unknown = has_unknown
        self.granularity = granularity
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self._check_params()

    # --- Конструирование ---

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, class_names: List[str], rng: np.random.Generator,
               num_layers: int = 1, has_unknown: bool = True, granularity: Optional[str] = None) -> "SeqClassifier":
        """Инициализация U(−1/√H, 1/√H) для всех весов и смещений."""
        bound = 1.0 / np.sqrt(hidden_dim)
        n_out = len(class_names) + (1 if has_unknown else 0)
        params: Dict[str, np.ndarray] = {}
        for layer in range(num_layers):
            d_in = input_dim if layer == 0 else hidden_dim
            params[f"lstm{layer}.W_x"] = rng.uniform(-bound, bound, (GATES * hidden_dim, d_in))
            params[f"lstm{layer}.W_h"] = rng.uniform(-bound, bound, (GATES * hidden_dim, hidden_dim))
            params[f"lstm{layer}.b"] = rng.uniform(-bound, bound, GATES * hidden_dim)
        params["head.W"] = rng.uniform(-bound, bound, (n_out, hidden_dim))
        params["head.b"] = rng.uniform(-bound, bound, n_out)
        return cls(input_dim, hidden_dim, class_names, params, num_layers, has_unknown, granularity)

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        h = self.hidden_dim
        shapes: Dict[str, Tuple[int, ...]] = {}
        for layer in range(self.num_layers):
            d_in = self._input_dim if layer == 0 else h
            shapes[f"lstm{layer}.W_x"] = (GATES * h, d_in)
            shapes[f"lstm{layer}.W_h"] = (GATES * h, h)
            shapes[f"lstm{layer}.b"] = (GATES * h,)
        shapes["head.W"] = (self.num_outputs, h)
        shapes["head.b"] = (self.num_outputs,)
        return shapes

    def _check_params(self):
        expected = self.expected_shapes()
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names mismatch: expected {sorted(expected)}, got {sorted(self.params)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"parameter {name} contains non-finite values")

    def copy(self) -> "SeqClassifier":
        return SeqClassifier(self._input_dim, self.hidden_dim, self._class_names,
                             {k: v.copy() for k, v in self.params.items()},
                             self.num_layers, self.has_unknown, self.granularity)

    # --- BaseFlowClassifier ---

    @property
    def class_names(self) -> List[str]:
        return self._class_names

    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def num_outputs(self) -> int:
        return len(self._class_names) + (1 if self.has_unknown else 0)

    def initial_state(self) -> RecurrentState:
        zeros = np.zeros((self.num_layers, self.hidden_dim))
        return RecurrentState(hidden=zeros, cell=zeros.copy())

    def step(self, state: RecurrentState, x: np.ndarray) -> Tuple[RecurrentState, np.ndarray]:
        new_state, features = recurrent_step(self, state, x)
        return new_state, score(self, features)

    # --- Батчевый проход для обучения ---

    def forward_batch(self, X: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """
        X: (B, T, input_dim), короткие последовательности дополнены нулями в конце.
        Возвращает оценки (B, T, num_outputs) на каждом шаге и кэш для backward.
        """
        B, T, _ = X.shape
        H = self.hidden_dim
        cache = ForwardCache()
        inp = X
        for layer in range(self.num_layers):
            W_x = self.params[f"lstm{layer}.W_x"]
            W_h = self.params[f"lstm{layer}.W_h"]
            xw = inp @ W_x.T + self.params[f"lstm{layer}.b"]
            h = np.zeros((B, H))
            c = np.zeros((B, H))
            lc = _LayerCache(
                inputs=inp,
                h_prev=np.empty((B, T, H)), c_prev=np.empty((B, T, H)),
                i=np.empty((B, T, H)), f=np.empty((B, T, H)), o=np.empty((B, T, H)),
                g=np.empty((B, T, H)), tc=np.empty((B, T, H)),
            )
            out = np.empty((B, T, H))
            for t in range(T):
                z = xw[:, t] + h @ W_h.T
                lc.h_prev[:, t] = h
                lc.c_prev[:, t] = c
                i = _sigmoid(z[:, :H])
                f = _sigmoid(z[:, H:2 * H])
                o = _sigmoid(z[:, 2 * H:3 * H])
                g = np.tanh(z[:, 3 * H:])
                c = f * c + i * g
                tc = np.tanh(c)
                h = o * tc
                lc.i[:, t], lc.f[:, t], lc.o[:, t], lc.g[:, t], lc.tc[:, t] = i, f, o, g, tc
                out[:, t] = h
            cache.layers.append(lc)
            inp = out
        cache.top = inp
        scores = inp @ self.params["head.W"].T + self.params["head.b"]
        return scores, cache

    def backward(self, cache: ForwardCache, d_scores: np.ndarray) -> Dict[str, np.ndarray]:
        """Градиенты по всем параметрам для dL/dscores формы (B, T, num_outputs)."""
        H = self.hidden_dim
        grads: Dict[str, np.ndarray] = {
            "head.W": np.einsum("btk,bth->kh", d_scores, cache.top),
            "head.b": d_scores.sum(axis=(0, 1)),
        }
        d_h = d_scores @ self.params["head.W"]
        for layer in reversed(range(self.num_layers)):
            lc = cache.layers[layer]
            W_h = self.params[f"lstm{layer}.W_h"]
            B, T, _ = d_h.shape
            d_z = np.empty((B, T, GATES * H))
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            for t in reversed(range(T)):
                i, f, o, g, tc = lc.i[:, t], lc.f[:, t], lc.o[:, t], lc.g[:, t], lc.tc[:, t]
                dh = d_h[:, t] + dh_next
                do = dh * tc
                dc = dh * o * (1.0 - tc * tc) + dc_next
                di = dc * g
                dg = dc * i
                df = dc * lc.c_prev[:, t]
                dc_next = dc * f
                dz = np.concatenate(
                    [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)],
                    axis=1,
                )
                d_z[:, t] = dz
                dh_next = dz @ W_h
            grads[f"lstm{layer}.W_x"] = np.einsum("btg,btd->gd", d_z, lc.inputs)
            grads[f"lstm{layer}.W_h"] = np.einsum("btg,bth->gh", d_z, lc.h_prev)
            grads[f"lstm{layer}.b"] = d_z.sum(axis=(0, 1))
            d_h = d_z @ self.params[f"lstm{layer}.W_x"]
        return grads


def recurrent_step(model: SeqClassifier, state: RecurrentState, x: np.ndarray) -> Tuple[RecurrentState, np.ndarray]:
    """Один шаг LSTM по всем слоям; признаки - новый hidden верхнего слоя."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise ValueError(f"dimension mismatch: expected input of length {model.input_dim}, got {x.shape}")
    H = model.hidden_dim
    hidden = np.empty_like(state.hidden)
    cell = np.empty_like(state.cell)
    inp = x
    for layer in range(model.num_layers):
        z = (model.params[f"lstm{layer}.W_x"] @ inp
             + model.params[f"lstm{layer}.W_h"] @ state.hidden[layer]
             + model.params[f"lstm{layer}.b"])
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        o = _sigmoid(z[2 * H:3 * H])
        g = np.tanh(z[3 * H:])
        cell[layer] = f * state.cell[layer] + i * g
        hidden[layer] = o * np.tanh(cell[layer])
        inp = hidden[layer]
    return RecurrentState(hidden=hidden, cell=cell), hidden[-1].copy()


def score(model: SeqClassifier, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (model.hidden_dim,):
        raise ValueError(f"dimension mismatch: expected features of length {model.hidden_dim}, got {features.shape}")
    return model.params["head.W"] @ features + model.params["head.b"]
