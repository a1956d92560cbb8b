"""Shared plumbing for the two summarization models."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor


def glorot(rng: np.random.Generator, shape: tuple, dtype) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Model:
    """Base class: an ordered dict of named parameter tensors plus a config record.

    Subclasses set ``kind`` and implement ``loss`` (teacher forced), ``begin``
    and ``next_token_logits`` (used by greedy decoding).
    """

    kind = ""
    config_type = None

    def __init__(self, config, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict = {}
        self.init_params(np.random.default_rng(seed))

    def init_params(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def freeze(self) -> "Model":
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Model":
        for p in self.params.values():
            p.requires_grad = True
        return self

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        from .errors import FormatError

        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise FormatError(f"parameter names differ (missing={missing}, unexpected={extra})")
        for name, p in self.params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise FormatError(f"{name}: stored shape {arr.shape} != expected {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=self.dtype)

    # subclass contract

    def loss(self, batch, dropout: float | None = None):
        raise NotImplementedError

    def begin(self, src_ids: np.ndarray, src_mask: np.ndarray):
        raise NotImplementedError

    def next_token_logits(self, state, prefix_ids: np.ndarray):
        raise NotImplementedError

