"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the
end of the pytest session.
"""

import contextlib
import math
import time

import numpy as np
import pytest

from deepsumm.cli import evaluate_checkpoint
from deepsumm.corpus import (
    EncodedCorpus,
    build_vocab,
    collate,
    filter_pair,
    make_batches,
    preprocess,
    split_corpus,
    tokenize_code,
)
from deepsumm.decoding import greedy_decode_ids
from deepsumm.gradcheck import check_gradients
from deepsumm.metrics import corpus_bleu, perplexity
from deepsumm.seq2seq import Seq2Seq, Seq2SeqConfig
from deepsumm.seq2seq import count_parameters as seq2seq_params
from deepsumm.synthetic import generate_pairs
from deepsumm.tensor import Tensor, no_grad
from deepsumm.training import (
    TrainHyper,
    build_model,
    evaluate_perplexity,
    load_model,
    save_checkpoint,
    train,
)
from deepsumm.transformer import Transformer, TransformerConfig, scaled_dot_attention
from deepsumm.transformer import count_parameters as transformer_params

from .conftest import ACCEPTANCE_LINES, random_pairs
from .test_metrics import brute_bleu
from .test_tensor import OP_CASES
from .test_transformer import naive_attention


class _Outcome:
    detail = ""


@contextlib.contextmanager
def criterion(number, title):
    outcome = _Outcome()
    start = time.perf_counter()
    try:
        yield outcome
    except BaseException as exc:
        reason = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        ACCEPTANCE_LINES.append(f"criterion {number} FAIL: {title} [{reason[:160]}]")
        print(ACCEPTANCE_LINES[-1])
        raise
    took = time.perf_counter() - start
    ACCEPTANCE_LINES.append(f"criterion {number} PASS: {title} [{outcome.detail}; {took:.1f}s]")
    print(ACCEPTANCE_LINES[-1])


@pytest.fixture(scope="module")
def synthetic_corpus():
    kept, _ = preprocess(generate_pairs(2600, seed=11))
    train_tok, val_tok, test_tok = split_corpus(kept, 2000, 200, 200, seed=0)
    src = build_vocab([m for m, _ in train_tok], min_count=1)
    tgt = build_vocab([c for _, c in train_tok], min_count=1)
    enc = lambda toks: EncodedCorpus.from_tokens(toks, src, tgt).pairs  # noqa: E731
    return dict(src=src, tgt=tgt, train=enc(train_tok), val=enc(val_tok), test=enc(test_tok),
                test_tokens=test_tok)


def test_criterion_01_attention_oracle():
    with criterion(1, "scaled dot-product attention matches triple-loop oracle") as c:
        rng = np.random.default_rng(2024)
        worst = 0.0
        start = time.perf_counter()
        for _ in range(200):
            lq, lk, dk, dv = rng.integers(1, 6, size=4)
            q, k, v = rng.normal(size=(lq, dk)), rng.normal(size=(lk, dk)), rng.normal(size=(lk, dv))
            mask = rng.random((lq, lk)) < 0.8
            mask[np.arange(lq), rng.integers(0, lk, size=lq)] = True
            got = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), mask).data
            worst = max(worst, float(np.abs(got - naive_attention(q, k, v, mask)).max()))
        elapsed = time.perf_counter() - start
        c.detail = f"max abs err {worst:.1e} over 200 instances in {elapsed:.2f}s"
        assert worst < 1e-6 and elapsed < 1.0, c.detail


def test_criterion_02_gradient_suite(tiny_batch):
    with criterion(2, "finite-difference gradient suite (ops, transformer, seq2seq)") as c:
        start = time.perf_counter()
        failures = []
        for name, (fn, params) in OP_CASES.items():
            failures += [(name, r) for r in check_gradients(fn, params, step=1e-3, rtol=1e-4) if not r.passed]
        transformer = Transformer(TransformerConfig(11, 11, N=1, d_model=8, h=2, d_ff=16, dropout=0.0),
                                  seed=0, dtype=np.float64)
        seq2seq = Seq2Seq(Seq2SeqConfig(11, 11, embed_dim=8, hidden_dim=8, dropout=0.0), seed=0, dtype=np.float64)
        checked = len(OP_CASES)
        for label, model in (("transformer", transformer), ("seq2seq", seq2seq)):
            results = check_gradients(lambda: model.loss(tiny_batch), model.params, step=1e-3, rtol=1e-4)
            failures += [(label, r) for r in results if not r.passed]
            checked += len(results)
        elapsed = time.perf_counter() - start
        c.detail = f"{len(OP_CASES)} ops + 2 models, {checked} checks, {len(failures)} failures, {elapsed:.1f}s"
        assert not failures and elapsed < 60.0, (c.detail, failures[:3])


def test_criterion_03_tokenizer_golden():
    with criterion(3, "tokenizer golden examples reproduce byte for byte") as c:
        a = " ".join(tokenize_code("public PartVO getChild(){ return child; }"))
        b = " ".join(tokenize_code("public double getOxygenConsumptionRate() { return "
                                   "getValueAsDouble(OXYGEN_CONSUMPTION_RATE); }"))
        c.detail = "2 examples"
        assert a == "public part vo get child return child", a
        assert b == ("public double get oxygen consumption rate return get value as double "
                     "oxygen consumption rate"), b


def test_criterion_04_filter_conformance():
    with criterion(4, "length filter keeps method <= 100 and 3 <= comment <= 13") as c:
        rng = np.random.default_rng(4)
        cases = [(int(m), int(k)) for m, k in zip(rng.integers(0, 400, 2000), rng.integers(0, 40, 2000))]
        cases += [(m, k) for m in (0, 99, 100, 101) for k in (0, 2, 3, 13, 14)]
        bad = [(m, k) for m, k in cases if filter_pair(["t"] * m, ["w"] * k) != (m <= 100 and 3 <= k <= 13)]
        c.detail = f"{len(cases)} length pairs incl. boundaries"
        assert not bad, bad[:5]


def test_criterion_05_bleu_oracle():
    with criterion(5, "corpus BLEU matches brute-force n-gram oracle") as c:
        rng = np.random.default_rng(5)
        vocab = list("abcde")
        sent = lambda: [vocab[i] for i in rng.integers(0, 5, rng.integers(1, 11))]  # noqa: E731
        mismatches = nonzero = 0
        for _ in range(100):
            n = int(rng.integers(1, 6))
            cands = [sent() for _ in range(n)]
            refs = [sent() for _ in range(n)]
            expected = brute_bleu(cands, refs)
            nonzero += expected > 0
            mismatches += abs(corpus_bleu(cands, refs) - expected) > 1e-12
        for _ in range(100):
            # near-copy references exercise the nonzero branch as well
            cands = [sent() for _ in range(int(rng.integers(1, 6)))]
            refs = [c[:int(rng.integers(0, len(c) + 1))] + sent()[:2] + c for c in cands]
            expected = brute_bleu(cands, refs)
            nonzero += expected > 0
            mismatches += abs(corpus_bleu(cands, refs) - expected) > 1e-12
        identical = corpus_bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "e"]])
        disjoint = corpus_bleu([["a", "b", "c", "d"]], [["e", "e", "e", "e"]])
        c.detail = f"100 random + 100 near-copy corpora ({nonzero} nonzero), identical={identical}, disjoint={disjoint}"
        assert mismatches == 0 and identical == pytest.approx(1.0, abs=1e-12) and disjoint == 0.0, c.detail


def _overfit(kind, config, corpus):
    pairs = corpus.pairs
    start = time.perf_counter()
    run = train(kind, config, pairs, pairs, TrainHyper(lr=1e-3, epochs=500, batch=32, seed=0, dropout=0.0))
    elapsed = time.perf_counter() - start
    exact = sum(greedy_decode_ids(run.model, s)[0] == list(t) for s, t in pairs)
    return run, exact, elapsed


def _monotone_window(losses, window=3):
    return all(min(losses[t + 1: t + 1 + window]) < losses[t] for t in range(len(losses) - window))


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["transformer", "seq2seq"])
def test_criterion_06_overfit(kind, overfit_corpus):
    title = f"{kind} overfits 32 real pairs (train ppl < 1.2, >= 90% exact decodes)"
    with criterion(6, title) as c:
        src, tgt = len(overfit_corpus.src_vocab), len(overfit_corpus.tgt_vocab)
        if kind == "transformer":
            config = TransformerConfig(src, tgt, N=1, d_model=64, h=4, d_ff=128, dropout=0.0)
        else:
            config = Seq2SeqConfig(src, tgt, embed_dim=64, hidden_dim=64, dropout=0.0)
        run, exact, elapsed = _overfit(kind, config, overfit_corpus)
        ppl = run.final_val_ppl
        steady = _monotone_window(run.loss_curve[:50])
        c.detail = (f"steps {run.steps}, train ppl {ppl:.4f}, exact {exact}/32, {elapsed:.0f}s, "
                    f"first-50-step loss decreasing within 3-step window: {steady}")
        assert run.steps <= 500 and ppl < 1.2 and exact >= 29 and elapsed < 300 and steady, c.detail


@pytest.mark.slow
def test_criterion_07_training_time(synthetic_corpus):
    with criterion(7, "transformer epoch time <= 0.8x seq2seq at matched parameters") as c:
        vs, vt = len(synthetic_corpus["src"]), len(synthetic_corpus["tgt"])
        tcfg = TransformerConfig(vs, vt, N=1, d_model=64, h=4, d_ff=128, dropout=0.1)
        budget = transformer_params(tcfg)
        hidden = min(range(8, 257), key=lambda h: abs(seq2seq_params(Seq2SeqConfig(vs, vt, 64, h)) - budget))
        scfg = Seq2SeqConfig(vs, vt, embed_dim=64, hidden_dim=hidden, dropout=0.1)
        rel = abs(seq2seq_params(scfg) - budget) / budget
        hyper = TrainHyper(lr=1e-3, epochs=2, batch=32, seed=0)
        pairs, val = synthetic_corpus["train"], synthetic_corpus["val"][:32]
        t_epoch = np.mean([r.wall_seconds for r in train("transformer", tcfg, pairs, val, hyper).records])
        s_epoch = np.mean([r.wall_seconds for r in train("seq2seq", scfg, pairs, val, hyper).records])
        ratio = t_epoch / s_epoch
        c.detail = (f"params {budget} vs {seq2seq_params(scfg)} (hidden {hidden}, {100 * rel:.1f}%), "
                    f"epoch {t_epoch:.2f}s vs {s_epoch:.2f}s, ratio {ratio:.2f}")
        assert rel <= 0.10 and ratio <= 0.8, c.detail


@pytest.mark.slow
def test_criterion_08_desk_scale_sanity(synthetic_corpus):
    title = "100-epoch transformer: test BLEU > 0 and test ppl < untrained/5"
    with criterion(8, title) as c:
        vs, vt = len(synthetic_corpus["src"]), len(synthetic_corpus["tgt"])
        config = TransformerConfig(vs, vt, N=1, d_model=64, h=4, d_ff=128, dropout=0.1)
        untrained = evaluate_perplexity(build_model("transformer", config, seed=0), synthetic_corpus["test"])
        run = train("transformer", config, synthetic_corpus["train"], synthetic_corpus["val"],
                    TrainHyper(lr=1e-3, epochs=100, batch=64, seed=0))
        result = evaluate_checkpoint(run.model, synthetic_corpus["src"], synthetic_corpus["tgt"],
                                     synthetic_corpus["test_tokens"])
        c.detail = (f"BLEU {result['bleu']:.2f}, test ppl {result['test_ppl']:.3f}, "
                    f"untrained ppl {untrained:.1f}")
        assert result["bleu"] > 0 and result["test_ppl"] < untrained / 5, c.detail


def _random_transformer(rng):
    h = int(rng.choice([1, 2, 4]))
    d_model = h * int(rng.integers(1, 5))
    vocab = int(rng.integers(6, 20))
    config = TransformerConfig(vocab, vocab, N=int(rng.integers(1, 4)), d_model=d_model, h=h,
                               d_ff=int(rng.integers(2, 17)), dropout=0.0)
    return Transformer(config, seed=int(rng.integers(1 << 30)), dtype=np.float64), vocab


def test_criterion_09_causality_and_padding():
    with criterion(9, "decoder causality and pad-extension invariance on 50 random configs") as c:
        rng = np.random.default_rng(9)
        worst_causal = worst_pad = 0.0
        for _ in range(50):
            model, vocab = _random_transformer(rng)
            batch = collate(random_pairs(rng, int(rng.integers(1, 4)), vocab, max_src=7, max_tgt=6))
            memory = model.encode(batch.src_ids, batch.src_mask)
            tgt = batch.tgt_ids[:, :-1]
            base = model.decode(tgt, memory, batch.src_mask).data
            j = int(rng.integers(1, tgt.shape[1])) if tgt.shape[1] > 1 else 0
            changed = tgt.copy()
            changed[:, j] = 4 + (changed[:, j] - 3) % (vocab - 4)
            out = model.decode(changed, memory, batch.src_mask).data
            worst_causal = max(worst_causal, float(np.abs(out[:, :j] - base[:, :j]).max(initial=0.0)))
            wide = batch.repad(batch.src_ids.shape[1] + int(rng.integers(1, 5)),
                               batch.tgt_ids.shape[1] + int(rng.integers(1, 5)))
            lt = tgt.shape[1]
            real = batch.tgt_mask[:, :-1]
            diff = model.logits(wide).data[:, :lt][real] - model.logits(batch).data[real]
            worst_pad = max(worst_pad, float(np.abs(diff).max()))
        c.detail = f"max prefix change {worst_causal:.1e}, max pad-extension logit change {worst_pad:.1e}"
        assert worst_causal < 1e-6 and worst_pad < 1e-6, c.detail


def test_criterion_10_checkpoint_round_trip(tmp_path, overfit_corpus):
    with criterion(10, "checkpoint save/load/evaluate and byte-identical re-save") as c:
        pairs = overfit_corpus.pairs
        details = []
        for kind, config in (("transformer", TransformerConfig(len(overfit_corpus.src_vocab),
                                                               len(overfit_corpus.tgt_vocab),
                                                               N=1, d_model=16, h=2, d_ff=32)),
                             ("seq2seq", Seq2SeqConfig(len(overfit_corpus.src_vocab),
                                                       len(overfit_corpus.tgt_vocab), 16, 16))):
            run = train(kind, config, pairs, pairs, TrainHyper(lr=1e-2, epochs=3, batch=16))
            first, second = tmp_path / f"{kind}.ckpt", tmp_path / f"{kind}2.ckpt"
            save_checkpoint(run.model, first)
            loaded = load_model(first)
            delta = abs(evaluate_perplexity(loaded, pairs) - evaluate_perplexity(run.model, pairs))
            save_checkpoint(loaded, second)
            same = first.read_bytes() == second.read_bytes()
            details.append(f"{kind}: ppl delta {delta:.1e}, byte-identical {same}")
            assert delta < 1e-6 and same, details[-1]
        c.detail = "; ".join(details)


def test_criterion_11_perplexity_identity(overfit_corpus):
    with criterion(11, "exp(mean CE) equals training loop validation ppl") as c:
        pairs = overfit_corpus.pairs
        config = TransformerConfig(len(overfit_corpus.src_vocab), len(overfit_corpus.tgt_vocab),
                                   N=1, d_model=16, h=2, d_ff=32)
        run = train("transformer", config, pairs, pairs[:20], TrainHyper(lr=1e-2, epochs=2, batch=8))
        total = 0.0
        count = 0
        with no_grad():
            for batch in make_batches(pairs[:20], 64):
                logits = run.model.logits(batch, dropout=0.0).data.astype(np.float64)
                targets = batch.tgt_ids[:, 1:]
                shifted = logits - logits.max(axis=-1, keepdims=True)
                log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
                picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
                real = targets != 0
                total -= float(picked[real].sum())
                count += int(real.sum())
        ours = perplexity(total, count)
        c.detail = f"metrics {ours:.9f} vs loop {run.final_val_ppl:.9f}"
        assert math.isfinite(ours) and abs(ours - run.final_val_ppl) < 1e-6, c.detail
