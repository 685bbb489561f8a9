"""Post-training symmetric 8-bit weight quantization.

Every parameter with two or more axes is stored as int8 with one float32
scale per tensor: ``scale = max|w| / 127`` (1 for an all-zero tensor) and
``q = clamp(round_half_away(w / scale), -127, 127)``. Biases and LayerNorm
parameters stay float32. Inference dequantizes once at load time.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .decoding import decode_utterance
from .model import Model, ModelConfig, ModelParams
from .numerics import Parameter

QMAX = 127


@dataclass
class QuantizedTensor:
    data: np.ndarray  # int8
    scale: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_tensor(w) -> QuantizedTensor:
    """Quantize a weight tensor; values are taken at float32 precision, as stored."""
    w = np.asarray(w, dtype=np.float32).astype(np.float64)
    if not np.isfinite(w).all():
        raise ValueError("cannot quantize non-finite weights")
    peak = float(np.abs(w).max()) if w.size else 0.0
    if peak == 0:
        return QuantizedTensor(np.zeros(w.shape, dtype=np.int8), 1.0)
    # the scale is stored as float32, so quantize against the stored value;
    # for subnormal weights, step up until the peak no longer needs clamping
    scale = np.float32(peak / QMAX)
    while scale == 0 or peak / float(scale) > QMAX + 0.5:
        scale = np.nextafter(scale, np.float32(np.inf))
    scale = float(scale)
    q = np.clip(round_half_away(w / scale), -QMAX, QMAX).astype(np.int8)
    return QuantizedTensor(q, scale)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.data.astype(np.float64) * q.scale


def is_weight(name: str, arr: np.ndarray) -> bool:
    return np.ndim(arr) >= 2


@dataclass
class QuantizedCheckpoint:
    config: ModelConfig
    tensors: dict  # name -> QuantizedTensor | float32 ndarray

    def save(self, path) -> int:
        entries = []
        for name, t in self.tensors.items():
            if isinstance(t, QuantizedTensor):
                entries.append((name, t.data, t.scale))
            else:
                entries.append((name, np.asarray(t, dtype=np.float32), None))
        return ckpt.write(path, asdict(self.config), entries)

    @classmethod
    def load(cls, path) -> "QuantizedCheckpoint":
        config, entries = ckpt.read(path)
        tensors = {name: (arr if scale is None else QuantizedTensor(arr, scale))
                   for name, (arr, scale) in entries.items()}
        return cls(ModelConfig.from_dict(config), tensors)

    def to_model(self) -> Model:
        ps = []
        for name, t in self.tensors.items():
            data = dequantize(t) if isinstance(t, QuantizedTensor) else np.asarray(t, dtype=np.float64)
            ps.append(Parameter(data, name))
        return Model(self.config, ModelParams.of(ps))


def quantize_weights(model) -> QuantizedCheckpoint:
    """Quantize a float model (or a checkpoint path) to 8-bit weights."""
    if not isinstance(model, Model):
        model = Model.load(model)
    tensors = {}
    for name, p in model.params.items():
        w = np.asarray(p.data, dtype=np.float32)
        if not np.isfinite(w).all():
            raise ValueError(f"{name}: non-finite weights")
        tensors[name] = quantize_tensor(w) if is_weight(name, w) else w
    return QuantizedCheckpoint(model.config, tensors)


def quantized_inference(qcheckpoint, features, B: int = 8) -> list[int]:
    if isinstance(qcheckpoint, (str, Path)):
        qcheckpoint = QuantizedCheckpoint.load(qcheckpoint)
    model = qcheckpoint.to_model() if isinstance(qcheckpoint, QuantizedCheckpoint) else qcheckpoint
    return decode_utterance(features, model, B).tokens
