"""Encoder-decoder Transformer with multi-head scaled dot-product attention.

Sublayers are post-norm: ``LayerNorm(x + Dropout(Sublayer(x)))``. Token
embeddings are scaled by sqrt(d_model) and summed with a fixed sinusoidal
position table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .corpus import Batch
from .errors import ContractError, LengthError, ShapeError
from .model import Model, glorot
from .tensor import Tensor


@dataclass
class TransformerConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    N: int = 2
    d_model: int = 256
    h: int = 8
    d_k: int = 0  # 0 means d_model // h
    d_v: int = 0
    d_ff: int = 512
    dropout: float = 0.1
    max_len: int = 128

    def __post_init__(self):
        if self.h <= 0:
            raise ContractError(f"need at least one attention head, got h={self.h}")
        if (self.d_k == 0 or self.d_v == 0) and self.d_model % self.h:
            raise ContractError(f"default head width needs d_model ({self.d_model}) divisible by h ({self.h})")
        if self.d_k == 0:
            self.d_k = self.d_model // self.h
        if self.d_v == 0:
            self.d_v = self.d_model // self.h
        dims = (self.src_vocab_size, self.tgt_vocab_size, self.d_model, self.h,
                self.d_k, self.d_v, self.d_ff, self.max_len)
        if min(dims) <= 0 or self.N < 0:
            raise ContractError(f"transformer dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_len < 14:
            raise ContractError("max_len must cover a framed comment (>= 14)")


def attention_param_count(cfg: TransformerConfig) -> int:
    return cfg.h * cfg.d_model * (2 * cfg.d_k + cfg.d_v) + cfg.h * cfg.d_v * cfg.d_model


def ffn_param_count(cfg: TransformerConfig) -> int:
    return 2 * cfg.d_model * cfg.d_ff + cfg.d_ff + cfg.d_model


def encoder_layer_param_count(cfg: TransformerConfig) -> int:
    return attention_param_count(cfg) + ffn_param_count(cfg) + 2 * 2 * cfg.d_model


def decoder_layer_param_count(cfg: TransformerConfig) -> int:
    return 2 * attention_param_count(cfg) + ffn_param_count(cfg) + 3 * 2 * cfg.d_model


def count_parameters(cfg: TransformerConfig) -> int:
    """Exact number of scalar parameters, embeddings and output layer included."""
    embeddings = (cfg.src_vocab_size + cfg.tgt_vocab_size) * cfg.d_model
    output = (cfg.d_model + 1) * cfg.tgt_vocab_size
    layers = cfg.N * (encoder_layer_param_count(cfg) + decoder_layer_param_count(cfg))
    return embeddings + output + layers


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, wavelengths up to 10000*2pi."""
    if max_len <= 0 or d_model <= 0:
        raise ContractError("positional_encoding needs positive sizes")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i2 / d_model)
    pe = np.zeros((max_len, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v, with ``mask`` (true = visible) broadcast to [..., L_q, L_k]."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    scores = T.scale(q @ k.swapaxes(-1, -2), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        visible = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
        if not visible.any(axis=-1).all():
            raise ContractError("attention query with every source position masked")
        scores = T.masked_fill(scores, ~visible)
    weights = T.softmax(scores, axis=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def split_heads_input(x: Tensor) -> Tensor:
    """[b, L, d] -> [b, 1, L, d] so per-head weights [h, d, k] broadcast to [b, h, L, k]."""
    return x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])


def multi_head_attention(w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor,
                         q_in: Tensor, k_in: Tensor, v_in: Tensor, mask=None,
                         return_weights: bool = False):
    """Concat(head_1..head_h) W^O with head_i = attention(q W_i^Q, k W_i^K, v W_i^V).

    ``w_q``/``w_k``/``w_v`` stack the per-head matrices: [h, d_model, d_k|d_v].
    Returns ``[b, L_q, d_model]`` (and weights ``[b, h, L_q, L_k]``).
    """
    h, _, d_v = w_v.shape
    q = split_heads_input(q_in) @ w_q
    k = split_heads_input(k_in) @ w_k
    v = split_heads_input(v_in) @ w_v
    heads, weights = scaled_dot_attention(q, k, v, mask, return_weights=True)
    b, _, l_q, _ = heads.shape
    merged = heads.transpose(0, 2, 1, 3).reshape(b, l_q, h * d_v)
    out = merged @ w_o
    return (out, weights) if return_weights else out


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


@dataclass
class TransformerState:
    memory: Tensor
    src_mask: np.ndarray


class Transformer(Model):
    kind = "transformer"
    config_type = TransformerConfig

    def init_params(self, rng):
        c = self.config
        dt = self.dtype
        self._add("src_embed", rng.normal(0, c.d_model ** -0.5, (c.src_vocab_size, c.d_model)))
        self._add("tgt_embed", rng.normal(0, c.d_model ** -0.5, (c.tgt_vocab_size, c.d_model)))
        for i in range(c.N):
            self._init_attention(rng, f"enc.{i}.self")
            self._init_norm(f"enc.{i}.ln1")
            self._init_ffn(rng, f"enc.{i}.ffn")
            self._init_norm(f"enc.{i}.ln2")
        for i in range(c.N):
            self._init_attention(rng, f"dec.{i}.self")
            self._init_norm(f"dec.{i}.ln1")
            self._init_attention(rng, f"dec.{i}.cross")
            self._init_norm(f"dec.{i}.ln2")
            self._init_ffn(rng, f"dec.{i}.ffn")
            self._init_norm(f"dec.{i}.ln3")
        self._add("out.w", glorot(rng, (c.d_model, c.tgt_vocab_size), dt))
        self._add("out.b", np.zeros(c.tgt_vocab_size))
        self.pe = positional_encoding(c.max_len, c.d_model).astype(dt)

    def _init_attention(self, rng, prefix):
        c = self.config
        self._add(f"{prefix}.w_q", glorot(rng, (c.h, c.d_model, c.d_k), self.dtype))
        self._add(f"{prefix}.w_k", glorot(rng, (c.h, c.d_model, c.d_k), self.dtype))
        self._add(f"{prefix}.w_v", glorot(rng, (c.h, c.d_model, c.d_v), self.dtype))
        self._add(f"{prefix}.w_o", glorot(rng, (c.h * c.d_v, c.d_model), self.dtype))

    def _init_norm(self, prefix):
        self._add(f"{prefix}.gain", np.ones(self.config.d_model))
        self._add(f"{prefix}.bias", np.zeros(self.config.d_model))

    def _init_ffn(self, rng, prefix):
        c = self.config
        self._add(f"{prefix}.w1", glorot(rng, (c.d_model, c.d_ff), self.dtype))
        self._add(f"{prefix}.b1", np.zeros(c.d_ff))
        self._add(f"{prefix}.w2", glorot(rng, (c.d_ff, c.d_model), self.dtype))
        self._add(f"{prefix}.b2", np.zeros(c.d_model))

    def head_weights(self, prefix: str, i: int) -> tuple:
        """(W_i^Q, W_i^K, W_i^V) of head ``i`` in the attention block ``prefix``."""
        p = self.params
        return p[f"{prefix}.w_q"][i], p[f"{prefix}.w_k"][i], p[f"{prefix}.w_v"][i]

    # -- building blocks --------------------------------------------------

    def _attn(self, prefix, q_in, kv_in, mask, return_weights=False):
        p = self.params
        return multi_head_attention(p[f"{prefix}.w_q"], p[f"{prefix}.w_k"], p[f"{prefix}.w_v"],
                                    p[f"{prefix}.w_o"], q_in, kv_in, kv_in, mask, return_weights)

    def _norm(self, prefix, x):
        return T.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"])

    def _ffn(self, prefix, x):
        p = self.params
        hidden = T.relu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"])
        return hidden @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]

    def _drop(self, x, p):
        return T.dropout(x, p, self.rng)

    def _embed(self, table: str, ids: np.ndarray, p: float) -> Tensor:
        length = ids.shape[1]
        if length > self.config.max_len:
            raise LengthError(f"sequence of {length} tokens exceeds max_len {self.config.max_len}")
        x = T.scale(T.embedding(self.params[table], ids), math.sqrt(self.config.d_model))
        return self._drop(x + self.pe[:length], p)

    def _p(self, dropout: Optional[float]) -> float:
        return self.config.dropout if dropout is None else dropout

    # -- forward passes -------------------------------------------------

    def encode(self, src_ids, src_mask, dropout: Optional[float] = 0.0) -> Tensor:
        """Memory ``[batch, src_len, d_model]`` from the encoder stack."""
        p = self._p(dropout)
        src_ids = np.asarray(src_ids)
        mask = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        x = self._embed("src_embed", src_ids, p)
        for i in range(self.config.N):
            x = self._norm(f"enc.{i}.ln1", x + self._drop(self._attn(f"enc.{i}.self", x, x, mask), p))
            x = self._norm(f"enc.{i}.ln2", x + self._drop(self._ffn(f"enc.{i}.ffn", x), p))
        return x

    def decode(self, tgt_ids, memory: Tensor, src_mask, tgt_mask=None,
               dropout: Optional[float] = 0.0, return_attention: bool = False):
        """Logits ``[batch, tgt_len, tgt_vocab]`` for each target prefix position.

        With ``return_attention`` also returns the cross-attention weights of
        every layer as a list of ``[batch, h, tgt_len, src_len]`` arrays.
        """
        p = self._p(dropout)
        tgt_ids = np.asarray(tgt_ids)
        length = tgt_ids.shape[1]
        if tgt_mask is None:
            tgt_mask = np.ones(tgt_ids.shape, dtype=bool)
        self_mask = causal_mask(length)[None, None] & np.asarray(tgt_mask, dtype=bool)[:, None, None, :]
        cross_mask = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        x = self._embed("tgt_embed", tgt_ids, p)
        cross_weights = []
        for i in range(self.config.N):
            x = self._norm(f"dec.{i}.ln1", x + self._drop(self._attn(f"dec.{i}.self", x, x, self_mask), p))
            ctx, w = self._attn(f"dec.{i}.cross", x, memory, cross_mask, return_weights=True)
            cross_weights.append(w.data)
            x = self._norm(f"dec.{i}.ln2", x + self._drop(ctx, p))
            x = self._norm(f"dec.{i}.ln3", x + self._drop(self._ffn(f"dec.{i}.ffn", x), p))
        logits = x @ self.params["out.w"] + self.params["out.b"]
        return (logits, cross_weights) if return_attention else logits

    def logits(self, batch: Batch, dropout: Optional[float] = 0.0) -> Tensor:
        memory = self.encode(batch.src_ids, batch.src_mask, dropout)
        return self.decode(batch.tgt_ids[:, :-1], memory, batch.src_mask, batch.tgt_mask[:, :-1], dropout)

    def loss(self, batch: Batch, dropout: Optional[float] = None, reduction: str = "mean") -> Tensor:
        """Teacher-forced token cross-entropy over non-pad target positions."""
        return T.cross_entropy(self.logits(batch, dropout), batch.tgt_ids[:, 1:], reduction=reduction)

    # -- decoding hooks -----------------------------------------------------

    def begin(self, src_ids, src_mask) -> TransformerState:
        return TransformerState(self.encode(src_ids, src_mask, 0.0), np.asarray(src_mask, dtype=bool))

    def next_token_logits(self, state: TransformerState, prefix_ids):
        logits, cross = self.decode(prefix_ids, state.memory, state.src_mask, return_attention=True)
        # [batch, layer, head, src_len] at the newest position
        attn = np.stack([w[:, :, -1, :] for w in cross], axis=1) if cross else \
            np.zeros((prefix_ids.shape[0], 0, self.config.h, state.memory.shape[1]))
        return logits.data[:, -1, :], attn
