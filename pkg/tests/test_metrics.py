import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clqg.metrics import bleu, evaluate, lcs_length, meteor_alignment, meteor_simplified, rouge_l


# brute-force oracles ------------------------------------------------------------

def oracle_bleu(hyps, refs, max_n=4):
    hyps = [h.split() for h in hyps]
    refs = [r.split() for r in refs]
    precisions = []
    for n in range(1, max_n + 1):
        hit = total = 0
        for h, r in zip(hyps, refs):
            h_grams = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            r_grams = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
            for g in set(h_grams):
                hit += min(h_grams.count(g), r_grams.count(g))
            total += len(h_grams)
        if hit == 0:
            return 0.0
        precisions.append(hit / total)
    c = sum(map(len, hyps))
    r = sum(map(len, refs))
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return 100 * bp * math.prod(precisions) ** (1 / max_n)


def oracle_lcs(a, b):
    best = 0
    for k in range(len(a) + 1):
        for idx in itertools.combinations(range(len(a)), k):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(tok in it for tok in sub):
                best = max(best, k)
    return best


def oracle_rouge(hyps, refs, beta=1.2):
    total = 0.0
    for h, r in zip(hyps, refs):
        h, r = h.split(), r.split()
        lcs = oracle_lcs(h, r)
        if lcs:
            p, rc = lcs / len(h), lcs / len(r)
            total += (1 + beta**2) * p * rc / (rc + beta**2 * p)
    return 100 * total / len(hyps)


def oracle_meteor(hyps, refs):
    total = 0.0
    for h, r in zip(hyps, refs):
        h, r = h.split(), r.split()
        used = [False] * len(r)
        align = {}
        for i, tok in enumerate(h):
            for j, rt in enumerate(r):
                if not used[j] and rt == tok:
                    used[j] = True
                    align[i] = j
                    break
        m = len(align)
        if m == 0:
            continue
        p, rc = m / len(h), m / len(r)
        fmean = 10 * p * rc / (rc + 9 * p)
        # a chunk starts at every aligned token whose predecessor is not its neighbour
        chunks = sum(1 for i in align if not (i - 1 in align and align[i - 1] == align[i] - 1))
        total += fmean * (1 - 0.5 * (chunks / m) ** 3)
    return total / len(hyps)


def random_corpus(rng):
    vocab = ["a", "b", "c", "d", "e"][: rng.integers(2, 6)]
    n = int(rng.integers(1, 5))

    def sent():
        return " ".join(rng.choice(vocab, size=int(rng.integers(1, 7))))
    return [sent() for _ in range(n)], [sent() for _ in range(n)]


# tests --------------------------------------------------------------------------

def test_oracles_on_randomised_corpora():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        hyps, refs = random_corpus(rng)
        for n in (1, 2, 3, 4):
            assert abs(bleu(hyps, refs, n) - oracle_bleu(hyps, refs, n)) < 1e-9
        assert abs(rouge_l(hyps, refs) - oracle_rouge(hyps, refs)) < 1e-9
        assert abs(meteor_simplified(hyps, refs) - oracle_meteor(hyps, refs)) < 1e-9


def test_hand_checked_clipping():
    # "the the the" vs "the cat": unigram precision is clipped to 1/3
    assert abs(bleu(["the the the"], ["the cat"], 1) - 100 / 3 * 1.0) < 1e-9
    # two-sentence corpus: p1 = 5/6, p2 = 3/4, c = r = 6
    value = bleu(["a b c", "d e f"], ["a b c", "d e g"], 2)
    assert abs(value - 100 * math.sqrt(5 / 6 * 3 / 4)) < 1e-9


def test_brevity_penalty():
    assert abs(bleu(["a b"], ["a b c d"], 1) - 100 * math.exp(1 - 4 / 2)) < 1e-9


def test_identical_and_disjoint():
    corpus = ["what about x y z ?", "क्या एक दो के बारे में ?"]
    report = evaluate(corpus, corpus)
    assert report.bleu4 == 100.0 and report.rouge_l == 100.0
    assert 0.99 < report.meteor <= 1.0
    disjoint = evaluate(["a b c d"], ["w x y z"])
    assert disjoint.bleu1 == disjoint.bleu4 == disjoint.rouge_l == disjoint.meteor == 0.0


def test_lcs_examples():
    assert lcs_length("abcbdab", "bdcaba") == 4
    assert lcs_length([], ["x"]) == 0


def test_meteor_alignment_takes_earliest_free_slot():
    assert meteor_alignment(["a", "a", "b"], ["b", "a", "x", "a"]) == [(0, 1), (1, 3), (2, 0)]


def test_meteor_fragmentation():
    # same words, reversed order: 3 chunks out of 3 matches
    value = meteor_simplified(["c b a"], ["a b c"])
    assert abs(value - (1 - 0.5)) < 1e-12


def test_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        rouge_l(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        bleu(["a"], ["a"], 5)


sentences = st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=6).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(sentences, sentences), min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_permutation_equivariance_and_ranges(pairs, rnd):
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    h, r = zip(*pairs)
    hs, rs = zip(*shuffled)
    a, b = evaluate(h, r), evaluate(hs, rs)
    for field in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor"):
        assert abs(getattr(a, field) - getattr(b, field)) < 1e-9
    assert 0 <= a.bleu4 <= 100 and 0 <= a.rouge_l <= 100 and 0 <= a.meteor <= 1
    assert a.sentences == len(pairs)
