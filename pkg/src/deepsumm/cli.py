"""Command-line entry point: ``deepsumm <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import metrics
from .corpus import (
    SPLIT_PRESETS,
    EncodedCorpus,
    Vocabulary,
    build_vocab,
    preprocess,
    read_corpus,
    split_corpus,
    tokenize_code,
    write_corpus,
)
from .decoding import DEFAULT_MAX_LEN, greedy_decode, greedy_decode_ids
from .errors import ContractError, DivergedError
from .seq2seq import Seq2SeqConfig
from .synthetic import generate_pairs
from .training import GridSpec, TrainHyper, evaluate_perplexity, grid_search, load_model, train
from .transformer import TransformerConfig

logger = logging.getLogger("deepsumm")

SRC_VOCAB = "src.vocab"
TGT_VOCAB = "tgt.vocab"


class CommandError(Exception):
    """User-facing failure; reported as one line, exit status 2."""


# -- helpers ------------------------------------------------------------------------


def read_raw_pairs(path) -> list:
    """Raw pairs from a JSON-lines file of ``{"method": ..., "comment": ...}`` objects."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append((obj["method"], obj["comment"]))
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CommandError(f"{path}:{lineno}: expected a JSON object with 'method' and 'comment'") from None
    return pairs


def load_vocabs(checkpoint, src_path=None, tgt_path=None) -> tuple:
    run_dir = Path(checkpoint).parent
    src = Path(src_path) if src_path else run_dir / SRC_VOCAB
    tgt = Path(tgt_path) if tgt_path else run_dir / TGT_VOCAB
    for p in (src, tgt):
        if not p.exists():
            raise CommandError(f"vocabulary file not found: {p}")
    return Vocabulary.load(src), Vocabulary.load(tgt)


def read_methods(path) -> list:
    """Methods from a file (``-`` for stdin); blank lines separate methods."""
    text = sys.stdin.read() if str(path) == "-" else Path(path).read_text(encoding="utf-8")
    blocks, current = [], []
    for line in text.splitlines():
        if line.strip():
            current.append(line)
        elif current:
            blocks.append("\n".join(current))
            current = []
    if current:
        blocks.append("\n".join(current))
    return blocks


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2))


# -- commands -------------------------------------------------------------------------


def cmd_preprocess(args) -> dict:
    raw = read_raw_pairs(args.input)
    kept, report = preprocess(raw)
    write_corpus(args.out, kept)
    summary = asdict(report)
    (Path(args.out) / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    _dump(summary)
    return summary


def cmd_split(args) -> dict:
    pairs = read_corpus(args.corpus)
    if args.preset:
        sizes = SPLIT_PRESETS[args.preset]
    else:
        if None in (args.train, args.val, args.test):
            raise CommandError("give --preset or all of --train/--val/--test")
        sizes = (args.train, args.val, args.test)
    parts = split_corpus(pairs, *sizes, seed=args.seed)
    out = Path(args.out)
    for name, part in zip(("train", "val", "test"), parts):
        write_corpus(out / name, part)
    summary = {name: len(part) for name, part in zip(("train", "val", "test"), parts)}
    _dump(summary)
    return summary


def cmd_vocab(args) -> dict:
    pairs = read_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = build_vocab([m for m, _ in pairs], args.min_count, args.max_size)
    tgt = build_vocab([c for _, c in pairs], args.min_count, args.max_size)
    src.save(out / SRC_VOCAB)
    tgt.save(out / TGT_VOCAB)
    summary = {"src_vocab": len(src), "tgt_vocab": len(tgt)}
    _dump(summary)
    return summary


def _model_config(args, src_size: int, tgt_size: int):
    if args.model == "transformer":
        return TransformerConfig(src_size, tgt_size, N=args.layers, d_model=args.d_model, h=args.heads,
                                 d_k=args.d_k, d_v=args.d_v, d_ff=args.d_ff, dropout=args.dropout,
                                 max_len=args.max_len)
    return Seq2SeqConfig(src_size, tgt_size, embed_dim=args.embed_dim or args.d_model,
                         hidden_dim=args.hidden or args.d_model, dropout=args.dropout)


def _prepare_training(args) -> tuple:
    corpus = Path(args.corpus)
    train_tokens = read_corpus(corpus / "train")
    val_tokens = read_corpus(corpus / "val") if (corpus / "val").exists() else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = build_vocab([m for m, _ in train_tokens], args.min_count, args.max_size)
    tgt = build_vocab([c for _, c in train_tokens], args.min_count, args.max_size)
    src.save(out / SRC_VOCAB)
    tgt.save(out / TGT_VOCAB)
    train_pairs = EncodedCorpus.from_tokens(train_tokens, src, tgt).pairs
    val_pairs = EncodedCorpus.from_tokens(val_tokens, src, tgt).pairs
    return src, tgt, train_pairs, val_pairs, out


def cmd_train(args) -> dict:
    src, tgt, train_pairs, val_pairs, out = _prepare_training(args)
    config = _model_config(args, len(src), len(tgt))
    hyper = TrainHyper(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed,
                       clip_norm=args.clip, max_steps=args.max_steps)
    run = train(args.model, config, train_pairs, val_pairs, hyper, out,
                on_epoch=lambda r: print(json.dumps(asdict(r)), flush=True))
    summary = run.summary()
    summary["num_parameters"] = run.model.num_parameters()
    (out / "run.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_grid(args) -> list:
    src, tgt, train_pairs, val_pairs, out = _prepare_training(args)
    config = _model_config(args, len(src), len(tgt))
    axes = {}
    for name, values in (("learning_rate", args.grid_lr), ("N", args.grid_layers),
                         ("d_model", args.grid_d_model), ("h", args.grid_heads), ("batch", args.grid_batch)):
        if values:
            axes[name] = values
    if not axes:
        raise CommandError("grid needs at least one --grid-* axis")
    hyper = TrainHyper(lr=args.lr, batch=args.batch, seed=args.seed, clip_norm=args.clip)
    runs = grid_search(args.model, GridSpec(axes), config, train_pairs, val_pairs, args.epochs, hyper, out)
    ranked = [dict(rank=i + 1, **r.summary()) for i, r in enumerate(runs)]
    (out / "grid.json").write_text(json.dumps(ranked, indent=2) + "\n")
    _dump(ranked)
    return ranked


def evaluate_checkpoint(model, src_vocab, tgt_vocab, test_tokens, max_len=DEFAULT_MAX_LEN, workers=1) -> dict:
    """Greedy-decode every test method and score BLEU against the reference comments."""
    model.freeze()
    encoded = EncodedCorpus.from_tokens(test_tokens, src_vocab, tgt_vocab).pairs
    decode = lambda src_ids: greedy_decode_ids(model, src_ids, max_len)[0]  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outputs = list(pool.map(decode, [s for s, _ in encoded]))
    else:
        outputs = [decode(s) for s, _ in encoded]
    candidates = [[tgt_vocab.id_to_token[i] for i in ids] for ids in outputs]
    references = [list(c) for _, c in test_tokens]
    bleu = metrics.corpus_bleu(candidates, references)
    ppl = evaluate_perplexity(model, encoded)
    return {"bleu": 100.0 * bleu, "test_ppl": ppl, "n_examples": len(encoded),
            "candidates": candidates}


def cmd_eval(args) -> dict:
    model = load_model(args.checkpoint)
    src, tgt = load_vocabs(args.checkpoint, args.src_vocab, args.tgt_vocab)
    test_tokens = read_corpus(args.corpus)
    if not test_tokens:
        raise CommandError(f"test corpus {args.corpus} is empty")
    result = evaluate_checkpoint(model, src, tgt, test_tokens, args.max_len, args.workers)
    candidates = result.pop("candidates")
    if args.predictions:
        Path(args.predictions).write_text("".join(" ".join(c) + "\n" for c in candidates), encoding="utf-8")
    _dump(result)
    return result


def summarize_method(model, src_vocab, tgt_vocab, method_source: str, max_len=DEFAULT_MAX_LEN):
    tokens = tokenize_code(method_source)
    comment, record = greedy_decode(model, src_vocab.sequence(tokens), tgt_vocab=tgt_vocab, max_len=max_len)
    return comment, record


def cmd_summarize(args) -> list:
    model = load_model(args.checkpoint).freeze()
    src, tgt = load_vocabs(args.checkpoint, args.src_vocab, args.tgt_vocab)
    lines = []
    for method in read_methods(args.input):
        comment, _ = summarize_method(model, src, tgt, method, args.max_len)
        lines.append(" ".join(comment))
        print(lines[-1])
    return lines


def cmd_attention(args) -> dict:
    model = load_model(args.checkpoint).freeze()
    src, tgt = load_vocabs(args.checkpoint, args.src_vocab, args.tgt_vocab)
    methods = read_methods(args.input)
    if not methods:
        raise CommandError("no method source given")
    _, record = summarize_method(model, src, tgt, methods[0], args.max_len)
    doc = record.to_dict()
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(" ".join(record.generated_tokens))
    return doc


def cmd_generate(args) -> int:
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for method, comment in generate_pairs(args.n, args.seed):
            fh.write(json.dumps({"method": method, "comment": comment}) + "\n")
    return args.n


# -- argument parsing ----------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("transformer", "seq2seq"), default="transformer")
    p.add_argument("--layers", type=int, default=2, help="encoder/decoder layers N")
    p.add_argument("--d-model", type=int, default=256)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--d-k", type=int, default=0, help="per-head key width (0: d_model/heads)")
    p.add_argument("--d-v", type=int, default=0, help="per-head value width (0: d_model/heads)")
    p.add_argument("--d-ff", type=int, default=512)
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--hidden", type=int, default=0, help="seq2seq hidden size per direction (0: d_model)")
    p.add_argument("--embed-dim", type=int, default=0, help="seq2seq embedding size (0: d_model)")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--max-size", type=int, default=50_000)
    p.add_argument("corpus", help="directory with train/ and val/ corpora")
    p.add_argument("out", help="run directory for checkpoints and logs")


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("checkpoint")
    p.add_argument("--src-vocab")
    p.add_argument("--tgt-vocab")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsumm", description="Java method summarization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize and filter raw JSON-lines pairs")
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="random disjoint train/val/test split")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--preset", choices=sorted(SPLIT_PRESETS))
    p.add_argument("--train", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("vocab", help="build source/target vocabulary files")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--max-size", type=int, default=50_000)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train", help="train one model")
    _add_model_flags(p)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="grid search over N, d_model, heads, batch, learning rate")
    _add_model_flags(p)
    p.add_argument("--grid-lr", type=float, nargs="+")
    p.add_argument("--grid-layers", type=int, nargs="+")
    p.add_argument("--grid-d-model", type=int, nargs="+")
    p.add_argument("--grid-heads", type=int, nargs="+")
    p.add_argument("--grid-batch", type=int, nargs="+")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="BLEU and perplexity on a test corpus")
    _add_decode_flags(p)
    p.add_argument("corpus")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--predictions", help="write decoded comments here, one per line")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("summarize", help="generate comments for methods (file or '-')")
    _add_decode_flags(p)
    p.add_argument("input", nargs="?", default="-")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("attention", help="export the attention grid for one method")
    _add_decode_flags(p)
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("generate", help="write template-generated raw pairs as JSON lines")
    p.add_argument("out")
    p.add_argument("-n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CommandError, ContractError, DivergedError, OSError, UnicodeDecodeError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"deepsumm {args.command}: error: {message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
