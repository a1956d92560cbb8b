"""Greedy autoregressive decoding with cross-attention capture."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, EOS_ID, MAX_COMMENT_TOKENS
from .errors import ContractError
from .tensor import no_grad

DEFAULT_MAX_LEN = MAX_COMMENT_TOKENS + 1


@dataclass
class AttentionRecord:
    source_tokens: list
    generated_tokens: list
    # weights[layer][head][target_pos][source_pos]
    weights: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"source_tokens": list(self.source_tokens),
                "generated_tokens": list(self.generated_tokens),
                "weights": self.weights}


def greedy_decode_ids(model, src_ids, max_len: int = DEFAULT_MAX_LEN):
    """Greedy decode one source id sequence.

    Returns ``(token_ids, attention)`` where ``token_ids`` excludes ``<s>``/``</s>``
    and ``attention`` is ``[layer, head, len(token_ids), src_len]``. Ties go to
    the lowest id (``np.argmax`` returns the first maximum).
    """
    if max_len < 1:
        raise ContractError("max_len must be at least 1")
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    mask = np.ones_like(src, dtype=bool)
    out: list = []
    rows: list = []
    with no_grad():
        state = model.begin(src, mask)
        prefix = np.array([[BOS_ID]], dtype=np.int64)
        for _ in range(max_len):
            logits, attn = model.next_token_logits(state, prefix)
            token = int(np.argmax(logits[0]))
            if token == EOS_ID:
                break
            out.append(token)
            rows.append(attn[0])
            prefix = np.concatenate([prefix, [[token]]], axis=1)
    if rows:
        attention = np.stack(rows, axis=2)
    else:
        n_layers, n_heads = attn.shape[1], attn.shape[2]
        attention = np.zeros((n_layers, n_heads, 0, src.shape[1]))
    return out, attention


def greedy_decode(model, src, src_vocab=None, tgt_vocab=None, max_len: int = DEFAULT_MAX_LEN):
    """Greedy-decode a TokenSequence (or raw ids) into comment tokens plus an AttentionRecord."""
    ids = list(src.ids) if hasattr(src, "ids") else list(src)
    source_tokens = list(src.tokens) if hasattr(src, "tokens") else (
        [src_vocab.id_to_token[i] for i in ids] if src_vocab is not None else [str(i) for i in ids])
    out_ids, attention = greedy_decode_ids(model, ids, max_len)
    tokens = [tgt_vocab.id_to_token[i] for i in out_ids] if tgt_vocab is not None else out_ids
    record = AttentionRecord(source_tokens, list(tokens), attention.tolist())
    return tokens, record
