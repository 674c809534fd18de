"""Parameter containers and initialisers shared by all models."""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, get_default_dtype


class Module:
    """A model is a flat, ordered mapping of dotted parameter names to tensors.

    Subclasses set ``kind`` and implement ``descriptor()`` (a JSON-able dict
    from which ``from_descriptor`` rebuilds an identically shaped model).
    """

    kind = "module"

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=get_default_dtype()), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            if missing or extra:
                raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            if name not in self.params:
                continue
            if value.shape != self.params[name].shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {self.params[name].shape}")
            self.params[name].data = np.array(value, dtype=self.params[name].dtype)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_(self) -> "Module":
        for p in self.params.values():
            p.data = np.zeros_like(p.data)
        return self

    def freeze(self) -> "Module":
        for p in self.params.values():
            p.requires_grad = False
        return self

    def descriptor(self) -> dict:
        raise NotImplementedError


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def uniform(rng: np.random.Generator, scale: float, shape) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def lstm_weights(rng: np.random.Generator, input_size: int, hidden: int):
    """Weights for one LSTM direction; forget-gate bias starts at 1."""
    s = 1.0 / math.sqrt(hidden)
    wx = uniform(rng, s, (input_size, 4 * hidden))
    wh = uniform(rng, s, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return wx, wh, b
