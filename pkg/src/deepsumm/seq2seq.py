"""Recurrent attentional encoder-decoder baseline.

A bidirectional GRU encodes the method; a unidirectional GRU decoder starts
from a linear projection of both final encoder states. At every step the new
decoder state scores encoder states bilinearly (``s W_a h_j``), the softmax
weights form a context vector, and ``[context; state]`` goes through a linear
layer to vocabulary logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .corpus import Batch
from .errors import ContractError
from .model import Model, glorot
from .tensor import Tensor


@dataclass
class Seq2SeqConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    embed_dim: int = 256
    hidden_dim: int = 256
    dropout: float = 0.1
    max_decode_len: int = 14

    def __post_init__(self):
        dims = (self.src_vocab_size, self.tgt_vocab_size, self.embed_dim, self.hidden_dim)
        if min(dims) <= 0:
            raise ContractError(f"seq2seq dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_decode_len < 14:
            raise ContractError("max_decode_len must cover 13 comment tokens plus </s>")


def count_parameters(cfg: Seq2SeqConfig) -> int:
    e, h = cfg.embed_dim, cfg.hidden_dim
    gru = lambda n_in: n_in * 3 * h + h * 3 * h + 2 * 3 * h  # noqa: E731
    return ((cfg.src_vocab_size + cfg.tgt_vocab_size) * e
            + 3 * gru(e)
            + 2 * h * h          # init projection
            + h * 2 * h          # bilinear attention
            + (3 * h + 1) * cfg.tgt_vocab_size)


def gru_step(gx: Tensor, h: Tensor, w_h: Tensor, b_h: Tensor) -> Tensor:
    """One GRU update given the precomputed input projection ``gx = x W_x + b_x``.

    Gate layout along the last axis is [reset | update | candidate].
    """
    n = h.shape[-1]
    gh = h @ w_h + b_h
    r = T.sigmoid(gx[:, :n] + gh[:, :n])
    z = T.sigmoid(gx[:, n:2 * n] + gh[:, n:2 * n])
    cand = T.tanh(gx[:, 2 * n:] + r * gh[:, 2 * n:])
    return cand + z * (h - cand)


def attention_scores(dec_state: Tensor, w_a: Tensor, enc_states: Tensor, src_mask) -> Tensor:
    """Softmax over ``dec_state W_a enc_state_j`` for unmasked j; masked j get exactly 0."""
    mask = np.asarray(src_mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ContractError("attention over a source with every position masked")
    query = (dec_state @ w_a).reshape(dec_state.shape[0], 1, w_a.shape[1])
    scores = (query @ enc_states.swapaxes(1, 2)).reshape(dec_state.shape[0], enc_states.shape[1])
    return T.softmax(T.masked_fill(scores, ~mask), axis=-1)


@dataclass
class Seq2SeqState:
    enc_states: Tensor
    src_mask: np.ndarray
    hidden: Tensor
    consumed: int = 0


class Seq2Seq(Model):
    kind = "seq2seq"
    config_type = Seq2SeqConfig

    def init_params(self, rng):
        c = self.config
        e, h, dt = c.embed_dim, c.hidden_dim, self.dtype
        self._add("src_embed", rng.normal(0, e ** -0.5, (c.src_vocab_size, e)))
        self._add("tgt_embed", rng.normal(0, e ** -0.5, (c.tgt_vocab_size, e)))
        for name in ("enc_fwd", "enc_bwd", "dec"):
            self._add(f"{name}.w_x", glorot(rng, (e, 3 * h), dt))
            self._add(f"{name}.b_x", np.zeros(3 * h))
            self._add(f"{name}.w_h", glorot(rng, (h, 3 * h), dt))
            self._add(f"{name}.b_h", np.zeros(3 * h))
        self._add("init.w", glorot(rng, (2 * h, h), dt))
        self._add("attn.w", glorot(rng, (h, 2 * h), dt))
        self._add("out.w", glorot(rng, (3 * h, c.tgt_vocab_size), dt))
        self._add("out.b", np.zeros(c.tgt_vocab_size))

    def _p(self, dropout):
        return self.config.dropout if dropout is None else dropout

    def _run_direction(self, name: str, gx: Tensor, gate: np.ndarray, steps) -> list:
        p = self.params
        b, h = gx.shape[0], self.config.hidden_dim
        state = Tensor(np.zeros((b, h), dtype=self.dtype))
        outputs = [None] * gx.shape[1]
        for t in steps:
            new = gru_step(gx[:, t], state, p[f"{name}.w_h"], p[f"{name}.b_h"])
            # pad steps carry the previous state through unchanged
            state = state + T.mul(new - state, gate[:, t])
            outputs[t] = state
        return outputs, state

    def encode(self, src_ids, src_mask, dropout: Optional[float] = 0.0):
        """Per-step ``[fwd; bwd]`` states ``[b, L, 2h]`` and the decoder's initial state ``[b, h]``."""
        p = self.params
        src_ids = np.asarray(src_ids)
        gate = np.asarray(src_mask, dtype=self.dtype)[:, :, None]
        x = T.dropout(T.embedding(p["src_embed"], src_ids), self._p(dropout), self.rng)
        length = src_ids.shape[1]
        fwd, fwd_final = self._run_direction("enc_fwd", x @ p["enc_fwd.w_x"] + p["enc_fwd.b_x"],
                                             gate, range(length))
        bwd, bwd_final = self._run_direction("enc_bwd", x @ p["enc_bwd.w_x"] + p["enc_bwd.b_x"],
                                             gate, reversed(range(length)))
        enc_states = T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=-1)
        init_state = T.concat([fwd_final, bwd_final], axis=-1) @ p["init.w"]
        return enc_states, init_state

    def decode_step(self, prev_ids, dec_state: Tensor, enc_states: Tensor, src_mask,
                    dropout: Optional[float] = 0.0, gx: Optional[Tensor] = None):
        """Advance the decoder one token: returns (logits, new_state, attention weights)."""
        p = self.params
        drop = self._p(dropout)
        if gx is None:
            emb = T.dropout(T.embedding(p["tgt_embed"], np.asarray(prev_ids)), drop, self.rng)
            gx = emb @ p["dec.w_x"] + p["dec.b_x"]
        new_state = gru_step(gx, dec_state, p["dec.w_h"], p["dec.b_h"])
        weights = attention_scores(new_state, p["attn.w"], enc_states, src_mask)
        b = weights.shape[0]
        context = (weights.reshape(b, 1, weights.shape[1]) @ enc_states).reshape(b, enc_states.shape[2])
        features = T.dropout(T.concat([context, new_state], axis=-1), drop, self.rng)
        logits = features @ p["out.w"] + p["out.b"]
        return logits, new_state, weights

    def logits(self, batch: Batch, dropout: Optional[float] = 0.0) -> Tensor:
        p = self.params
        drop = self._p(dropout)
        enc_states, state = self.encode(batch.src_ids, batch.src_mask, drop)
        inputs = batch.tgt_ids[:, :-1]
        emb = T.dropout(T.embedding(p["tgt_embed"], inputs), drop, self.rng)
        gx_all = emb @ p["dec.w_x"] + p["dec.b_x"]
        steps = []
        for t in range(inputs.shape[1]):
            logits, state, _ = self.decode_step(None, state, enc_states, batch.src_mask, drop, gx=gx_all[:, t])
            steps.append(logits)
        return T.stack(steps, axis=1)

    def loss(self, batch: Batch, dropout: Optional[float] = None, reduction: str = "mean") -> Tensor:
        """Teacher-forced token cross-entropy over non-pad target positions."""
        return T.cross_entropy(self.logits(batch, dropout), batch.tgt_ids[:, 1:], reduction=reduction)

    # -- decoding hooks -------------------------------------------------------

    def begin(self, src_ids, src_mask) -> Seq2SeqState:
        enc_states, init_state = self.encode(src_ids, src_mask, 0.0)
        return Seq2SeqState(enc_states, np.asarray(src_mask, dtype=bool), init_state)

    def next_token_logits(self, state: Seq2SeqState, prefix_ids):
        prefix_ids = np.asarray(prefix_ids)
        if prefix_ids.shape[1] != state.consumed + 1:
            raise ContractError("seq2seq decoding must advance one token at a time")
        logits, state.hidden, weights = self.decode_step(prefix_ids[:, -1], state.hidden,
                                                         state.enc_states, state.src_mask, 0.0)
        state.consumed += 1
        # one layer, one head
        return logits.data, weights.data[:, None, None, :]
