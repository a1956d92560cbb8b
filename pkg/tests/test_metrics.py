import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsumm.errors import ContractError
from deepsumm.metrics import corpus_bleu, perplexity


def brute_bleu(cands, refs):
    """Direct restatement of pooled clipped precision BLEU-4 using list counting."""
    num = [0] * 4
    den = [0] * 4
    for cand, ref in zip(cands, refs):
        for n in range(1, 5):
            cg = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
            rg = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
            den[n - 1] += len(cg)
            for g in set(cg):
                num[n - 1] += min(cg.count(g), rg.count(g))
    if 0 in num:
        return 0.0
    geo = 1.0
    for a, b in zip(num, den):
        geo *= (a / b) ** 0.25
    c = sum(map(len, cands))
    r = sum(map(len, refs))
    return geo if c > r else geo * math.exp(1 - r / c)


def test_identical_corpus_is_one():
    refs = [["returns", "the", "child", "part"], ["sets", "the", "maximum", "color", "depth"]]
    assert corpus_bleu(refs, refs) == pytest.approx(1.0, abs=1e-12)


def test_disjoint_corpus_is_zero():
    assert corpus_bleu([["a", "b", "c", "d"]], [["w", "x", "y", "z"]]) == 0.0


def test_missing_four_gram_is_zero():
    assert corpus_bleu([["the", "cat", "sat"]], [["the", "cat", "sat", "down"]]) == 0.0


def test_hand_computed_brevity():
    cand = [["the", "cat", "sat", "on", "mat"]]
    ref = [["the", "cat", "sat", "on", "the", "mat"]]
    # precisions 5/5, 3/4, 2/3, 1/2; c=5 r=6
    expected = math.exp(1 - 6 / 5) * (1 * 0.75 * (2 / 3) * 0.5) ** 0.25
    assert corpus_bleu(cand, ref) == pytest.approx(expected, rel=1e-12)


def test_against_brute_force_oracle():
    rng = np.random.default_rng(0)
    vocab = list("abcde")
    nonzero = 0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        cands = [[vocab[i] for i in rng.integers(0, 5, rng.integers(1, 11))] for _ in range(n)]
        refs = [[vocab[i] for i in rng.integers(0, 5, rng.integers(1, 11))] for _ in range(n)]
        if rng.random() < 0.5:
            # near copies so nonzero scores are exercised too
            refs = [c[:int(rng.integers(0, len(c) + 1))] + r[:2] + c for c, r in zip(cands, refs)]
        expected = brute_bleu(cands, refs)
        nonzero += expected > 0
        assert abs(corpus_bleu(cands, refs) - expected) < 1e-9
    assert nonzero > 10


@given(st.lists(st.tuples(st.lists(st.sampled_from("abc"), min_size=1, max_size=8),
                          st.lists(st.sampled_from("abc"), min_size=1, max_size=8)),
                min_size=1, max_size=6), st.randoms())
def test_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = corpus_bleu([c for c, _ in pairs], [r for _, r in pairs])
    b = corpus_bleu([c for c, _ in shuffled], [r for _, r in shuffled])
    assert abs(a - b) < 1e-12 and 0.0 <= a <= 1.0


def test_bleu_contract_errors():
    with pytest.raises(ContractError):
        corpus_bleu([], [])
    with pytest.raises(ContractError):
        corpus_bleu([["a"]], [])


def test_uniform_model_perplexity_is_vocab_size():
    count = 37
    assert perplexity(count * math.log(1000), count) == pytest.approx(1000, rel=1e-9)


def test_zero_loss_perplexity_is_one():
    assert perplexity(0.0, 12) == 1.0


def test_geometric_mean_of_inverse_probabilities():
    probs = [0.5, 0.25, 0.125]
    total = -sum(math.log(p) for p in probs)
    assert perplexity(total, len(probs)) == pytest.approx(4.0, rel=1e-12)
    mpmath.mp.dps = 30
    exact = mpmath.exp(mpmath.fsum(-mpmath.log(p) for p in probs) / 3)
    assert abs(perplexity(total, 3) - float(exact)) < 1e-12


def test_perplexity_needs_tokens():
    with pytest.raises(ContractError):
        perplexity(1.0, 0)
