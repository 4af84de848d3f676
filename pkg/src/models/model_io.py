# src/models/model_io.py

"""
Файл модели (.ffm), версия 1:

  смещение  размер  содержимое
  0         8       магия b"FFLOWMDL"
  8         4       версия формата, uint32 little-endian (= 1)
  12        4       длина манифеста M в байтах, uint32 little-endian
  16        M       манифест, UTF-8 JSON
  16+M      ...     тензоры подряд, float32 little-endian, C-порядок

Манифест: input_dim, hidden_dim, num_layers, has_unknown, class_names,
granularity, decider {t_unk, c_unk}, threshold (калиброванный T_p/T_t или null),
trace {mtu, heavy_threshold, slot_delta, ratio_cap} и список tensors
[{name, shape, offset, length}], где offset/length в байтах от начала блока тензоров.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from src.config.settings import DeciderConfig, TraceConfig
from src.core.errors import ModelFormatError
from src.core.log import get_logger
from src.models.seq_classifier import SeqClassifier

logger = get_logger(__name__)

MAGIC = b"FFLOWMDL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")
_TENSOR_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class ModelCheckpoint:
    model: SeqClassifier
    decider: DeciderConfig
    threshold: Optional[float] = None
    trace: TraceConfig = TraceConfig()

    @property
    def granularity(self) -> Optional[str]:
        return self.model.granularity


def encode_model(ckpt: ModelCheckpoint) -> bytes:
    model = ckpt.model
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(model.params):
        data = np.ascontiguousarray(model.params[name], dtype=_TENSOR_DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(model.params[name].shape),
                        "offset": offset, "length": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest: Dict[str, Any] = {
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "num_layers": model.num_layers,
        "has_unknown": model.has_unknown,
        "class_names": list(model.class_names),
        "granularity": model.granularity,
        "decider": ckpt.decider.model_dump(),
        "threshold": ckpt.threshold,
        "trace": ckpt.trace.model_dump(),
        "tensors": tensors,
    }
    raw = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(raw)) + raw + b"".join(blobs)


def decode_model(data: bytes) -> ModelCheckpoint:
    if len(data) < _HEADER.size:
        raise ModelFormatError("model file is truncated: header incomplete")
    magic, version, manifest_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError("not a model file: bad magic")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    start = _HEADER.size
    if len(data) < start + manifest_len:
        raise ModelFormatError("model file is truncated: manifest incomplete")
    try:
        manifest = json.loads(data[start:start + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"model manifest is not valid JSON: {e}") from e

    body = memoryview(data)[start + manifest_len:]
    params: Dict[str, np.ndarray] = {}
    try:
        for t in manifest["tensors"]:
            shape = tuple(int(s) for s in t["shape"])
            expected = int(np.prod(shape, dtype=np.int64)) * _TENSOR_DTYPE.itemsize
            if t["length"] != expected or t["offset"] + t["length"] > len(body):
                raise ModelFormatError(f"tensor {t['name']}: length/offset out of range")
            arr = np.frombuffer(body[t["offset"]:t["offset"] + t["length"]], dtype=_TENSOR_DTYPE)
            params[t["name"]] = arr.reshape(shape).astype(np.float64)
        model = SeqClassifier(
            input_dim=int(manifest["input_dim"]),
            hidden_dim=int(manifest["hidden_dim"]),
            class_names=list(manifest["class_names"]),
            params=params,
            num_layers=int(manifest["num_layers"]),
            has_unknown=bool(manifest["has_unknown"]),
            granularity=manifest.get("granularity"),
        )
        decider = DeciderConfig.model_validate(manifest["decider"])
        trace = TraceConfig.model_validate(manifest.get("trace", {}))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"invalid model manifest: {e}") from e
    threshold = manifest.get("threshold")
    return ModelCheckpoint(model, decider, None if threshold is None else float(threshold), trace)


def save_model(ckpt: ModelCheckpoint, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_model(ckpt))
    logger.info(f"[ModelIO] Saved {ckpt.granularity} model ({len(ckpt.model.class_names)} classes) to {path}")


def load_model(path: str) -> ModelCheckpoint:
    p = Path(path)
    if not p.exists():
        raise ModelFormatError(f"model file not found: {path}")
    return decode_model(p.read_bytes())
