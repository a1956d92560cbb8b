"""Tokenization, length filtering, vocabularies and batching for method/comment pairs."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, EmptySequenceError, FormatError

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = (PAD, BOS, EOS, UNK)

MAX_METHOD_TOKENS = 100
MIN_COMMENT_TOKENS = 3
MAX_COMMENT_TOKENS = 13

FUNCTIONS_FILE = "functions.tok"
COMMENTS_FILE = "comments.tok"

# (train, val, test) sizes of the three dataset presets.
SPLIT_PRESETS = {
    "small": (100_000, 3_000, 3_000),
    "medium": (1_000_000, 5_000, 5_000),
    "large": (2_100_000, 10_000, 10_000),
}

_NON_ALNUM = re.compile(r"[^A-Za-z0-9]+")
# Acronym runs keep all but the last capital: "PartVO" -> Part|VO, "HTTPServer" -> HTTP|Server.
_SUBTOKEN = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")
_JAVADOC_DECORATION = re.compile(r"^\s*(/\*\*+|\*+/?|//+)?\s*")
_SENTENCE_END = re.compile(r"\.(\s|$)")


def tokenize_code(method_source: str) -> list:
    """Split Java source into lowercase alphanumeric subtokens.

    >>> tokenize_code("public PartVO getChild(){ return child; }")
    ['public', 'part', 'vo', 'get', 'child', 'return', 'child']
    """
    tokens = []
    for word in _NON_ALNUM.sub(" ", method_source).split():
        tokens.extend(piece.lower() for piece in _SUBTOKEN.findall(word))
    if not tokens:
        raise EmptySequenceError(f"method reduces to zero tokens: {method_source[:40]!r}")
    return tokens


def first_comment_line(comment_source: str) -> str:
    """First non-empty JavaDoc line, cut at the first sentence-ending period."""
    for raw in comment_source.splitlines():
        line = _JAVADOC_DECORATION.sub("", raw, count=1).strip()
        if line:
            match = _SENTENCE_END.search(line)
            return line[: match.start()] if match else line
    return ""


def tokenize_comment(comment_source: str) -> list:
    """Lowercase, separator-split tokens of the comment's first line."""
    line = first_comment_line(comment_source)
    tokens = _NON_ALNUM.sub(" ", line).lower().split()
    if not tokens:
        raise EmptySequenceError(f"comment reduces to zero tokens: {comment_source[:40]!r}")
    return tokens


def filter_pair(method_tokens: Sequence[str], comment_tokens: Sequence[str]) -> bool:
    return (len(method_tokens) <= MAX_METHOD_TOKENS
            and MIN_COMMENT_TOKENS <= len(comment_tokens) <= MAX_COMMENT_TOKENS)


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple
    ids: tuple

    def __post_init__(self):
        if len(self.tokens) != len(self.ids):
            raise ContractError("tokens and ids differ in length")

    def __len__(self) -> int:
        return len(self.ids)


class Vocabulary:
    """Token/id map with ``<pad> <s> </s> <unk>`` fixed at ids 0-3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token = list(RESERVED)
        self.token_to_id = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self.token_to_id:
                raise ContractError(f"duplicate vocabulary entry {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def encode(self, tokens: Sequence[str]) -> list:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], keep_unk: bool = True) -> list:
        """Map ids back to tokens, dropping ``<pad>``, ``<s>`` and ``</s>``.

        ``<unk>`` survives unless ``keep_unk`` is false; generated output can
        legitimately contain it.
        """
        dropped = {PAD_ID, BOS_ID, EOS_ID} if keep_unk else {PAD_ID, BOS_ID, EOS_ID, UNK_ID}
        return [self.id_to_token[i] for i in ids if i not in dropped]

    def sequence(self, tokens: Sequence[str]) -> TokenSequence:
        return TokenSequence(tuple(tokens), tuple(self.encode(tokens)))

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.id_to_token)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != RESERVED:
            raise FormatError("vocabulary must start with <pad>, <s>, </s>, <unk>")
        return cls(lines[4:])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocab(sequences: Iterable[Sequence[str]], min_count: int = 2,
                max_size: int = 50_000) -> Vocabulary:
    """Most frequent tokens first (ties lexicographic), at most ``max_size`` beyond the reserved four."""
    counts = Counter()
    n_seq = 0
    for seq in sequences:
        counts.update(seq)
        n_seq += 1
    if n_seq == 0:
        raise ContractError("build_vocab needs at least one sequence")
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(ranked[:max_size])


def encode(tokens: Sequence[str], vocab: Vocabulary) -> list:
    return vocab.encode(tokens)


def decode_ids(ids: Iterable[int], vocab: Vocabulary) -> list:
    return vocab.decode(ids)


# -- batching ------------------------------------------------------------------


@dataclass
class Batch:
    src_ids: np.ndarray   # [batch, src_len]
    tgt_ids: np.ndarray   # [batch, tgt_len], rows framed <s> ... </s> then pads
    src_mask: np.ndarray  # true on real tokens
    tgt_mask: np.ndarray

    def __len__(self) -> int:
        return self.src_ids.shape[0]

    def repad(self, src_len: int, tgt_len: int) -> "Batch":
        """Same batch padded out to at least the given lengths."""
        src = _pad_rows([r[m] for r, m in zip(self.src_ids, self.src_mask)], max(src_len, self.src_ids.shape[1]))
        tgt = _pad_rows([r[m] for r, m in zip(self.tgt_ids, self.tgt_mask)], max(tgt_len, self.tgt_ids.shape[1]))
        return Batch(src, tgt, src != PAD_ID, tgt != PAD_ID)


def _pad_rows(rows: Sequence[Sequence[int]], width: int | None = None) -> np.ndarray:
    width = max(len(r) for r in rows) if width is None else width
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def frame_target(ids: Sequence[int]) -> list:
    return [BOS_ID, *ids, EOS_ID]


def collate(pairs: Sequence[tuple]) -> Batch:
    """Pad a list of ``(src_ids, tgt_ids)`` into a Batch; targets get framed."""
    src = _pad_rows([list(s) for s, _ in pairs])
    tgt = _pad_rows([frame_target(t) for _, t in pairs])
    return Batch(src, tgt, src != PAD_ID, tgt != PAD_ID)


def make_batches(pairs: Sequence[tuple], batch_size: int,
                 shuffle_seed: int | None = None) -> Iterator[Batch]:
    """Yield padded batches of ``(src_ids, tgt_ids)`` pairs; the last batch may be short."""
    if batch_size <= 0:
        raise ContractError("batch_size must be positive")
    order = np.arange(len(pairs))
    if shuffle_seed is not None:
        np.random.default_rng(shuffle_seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        yield collate([pairs[i] for i in order[start: start + batch_size]])


# -- corpus on disk --------------------------------------------------------------


def write_corpus(directory, pairs: Sequence[tuple]) -> None:
    """Write ``(method_tokens, comment_tokens)`` pairs as line-aligned token files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / FUNCTIONS_FILE, "w", encoding="utf-8", newline="\n") as f_out, \
            open(directory / COMMENTS_FILE, "w", encoding="utf-8", newline="\n") as c_out:
        for method, comment in pairs:
            f_out.write(" ".join(method) + "\n")
            c_out.write(" ".join(comment) + "\n")


def read_corpus(directory) -> list:
    directory = Path(directory)
    try:
        functions = (directory / FUNCTIONS_FILE).read_text(encoding="utf-8").splitlines()
        comments = (directory / COMMENTS_FILE).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise FormatError(f"missing corpus file: {exc.filename}") from None
    except UnicodeDecodeError:
        raise FormatError(f"corpus in {directory} is not valid UTF-8") from None
    if len(functions) != len(comments):
        raise FormatError(f"{FUNCTIONS_FILE} has {len(functions)} lines but "
                          f"{COMMENTS_FILE} has {len(comments)}")
    return [(f.split(), c.split()) for f, c in zip(functions, comments)]


def split_corpus(pairs: Sequence, train: int, val: int, test: int, seed: int = 0) -> tuple:
    """Disjoint random train/val/test subsets of the requested sizes."""
    if min(train, val, test) < 0:
        raise ContractError("split sizes must be non-negative")
    if train + val + test > len(pairs):
        raise ContractError(f"requested {train}+{val}+{test} examples from a corpus of {len(pairs)}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    pick = lambda idx: [pairs[i] for i in idx]  # noqa: E731
    return (pick(order[:train]), pick(order[train: train + val]),
            pick(order[train + val: train + val + test]))


@dataclass
class EncodedCorpus:
    """Token pairs together with their source/target vocabularies and id pairs."""

    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    pairs: list

    @classmethod
    def from_tokens(cls, token_pairs: Sequence[tuple], src_vocab: Vocabulary,
                    tgt_vocab: Vocabulary) -> "EncodedCorpus":
        encoded = [(src_vocab.encode(m), tgt_vocab.encode(c)) for m, c in token_pairs]
        return cls(src_vocab, tgt_vocab, encoded)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class PreprocessReport:
    pairs_in: int = 0
    pairs_kept: int = 0
    dropped_by_length: int = 0
    dropped_empty: int = 0


def preprocess(raw_pairs: Iterable[tuple]) -> tuple:
    """Tokenize and length-filter raw ``(method_source, comment_source)`` pairs.

    Returns ``(kept_token_pairs, report)``; pairs that tokenize to nothing are
    counted as ``dropped_empty`` rather than raising.
    """
    report = PreprocessReport()
    kept = []
    for method, comment in raw_pairs:
        report.pairs_in += 1
        try:
            m_tok = tokenize_code(method)
            c_tok = tokenize_comment(comment)
        except EmptySequenceError:
            report.dropped_empty += 1
            continue
        if not filter_pair(m_tok, c_tok):
            report.dropped_by_length += 1
            continue
        kept.append((m_tok, c_tok))
    report.pairs_kept = len(kept)
    return kept, report
