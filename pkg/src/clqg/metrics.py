"""Corpus BLEU-1..4, ROUGE-L and an exact-match METEOR variant.

All metrics take parallel lists of hypotheses and references (one reference
each). Inputs may be strings, which are normalised and split on whitespace,
or already tokenised sequences.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .bpe import normalize

ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9  # recall weighted 9:1 over precision
METEOR_GAMMA = 0.5
METEOR_EXPONENT = 3


def tokenize(text) -> list[str]:
    if isinstance(text, str):
        return normalize(text).split()
    return list(text)


def _prepare(hyps, refs) -> tuple[list[list[str]], list[list[str]]]:
    hyps, refs = list(hyps), list(refs)
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ValueError("cannot score an empty corpus")
    return [tokenize(h) for h in hyps], [tokenize(r) for r in refs]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs, max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100] with uniform weights and no smoothing."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be between 1 and 4")
    hyps, refs = _prepare(hyps, refs)
    matches = [0] * max_n
    totals = [0] * max_n
    for h, r in zip(hyps, refs):
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    c = sum(len(h) for h in hyps)
    r = sum(len(x) for x in refs)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _rouge_sentence(h: Sequence[str], r: Sequence[str]) -> float:
    lcs = lcs_length(h, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(h), lcs / len(r)
    b2 = ROUGE_BETA**2
    return (1 + b2) * p * rec / (rec + b2 * p)


def rouge_l(hyps, refs) -> float:
    """Sentence-averaged LCS F-measure (beta 1.2), scaled to [0, 100]."""
    hyps, refs = _prepare(hyps, refs)
    return 100.0 * sum(_rouge_sentence(h, r) for h, r in zip(hyps, refs)) / len(hyps)


def meteor_alignment(h: Sequence[str], r: Sequence[str]) -> list[tuple[int, int]]:
    """Exact-match alignment: each hypothesis token takes the earliest unused
    identical reference token. Returned pairs are sorted by hypothesis index."""
    free: dict[str, list[int]] = {}
    for j, tok in enumerate(r):
        free.setdefault(tok, []).append(j)
    pairs = []
    for i, tok in enumerate(h):
        slots = free.get(tok)
        if slots:
            pairs.append((i, slots.pop(0)))
    return pairs


def _meteor_sentence(h: Sequence[str], r: Sequence[str]) -> float:
    pairs = meteor_alignment(h, r)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, rec = m / len(h), m / len(r)
    fmean = p * rec / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * rec)
    chunks = 1 + sum(
        1 for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1)
    )
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_EXPONENT
    return fmean * (1 - penalty)


def meteor_simplified(hyps, refs) -> float:
    """Exact-match METEOR in [0, 1]; no stemming, synonyms or paraphrases."""
    hyps, refs = _prepare(hyps, refs)
    return sum(_meteor_sentence(h, r) for h, r in zip(hyps, refs)) / len(hyps)


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    sentences: int
    hyp_tokens: int
    ref_tokens: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("BLEU-1", self.bleu1), ("BLEU-2", self.bleu2), ("BLEU-3", self.bleu3),
                ("BLEU-4", self.bleu4), ("METEOR", self.meteor), ("ROUGE-L", self.rouge_l)]
        lines = [f"{name:<8} {value:8.3f}" for name, value in rows]
        lines.append(f"{self.sentences} sentences, {self.hyp_tokens} hyp / {self.ref_tokens} ref tokens")
        return "\n".join(lines)


def evaluate(hyps, refs) -> EvalReport:
    h, r = _prepare(hyps, refs)
    return EvalReport(
        bleu1=bleu(h, r, 1), bleu2=bleu(h, r, 2), bleu3=bleu(h, r, 3), bleu4=bleu(h, r, 4),
        meteor=meteor_simplified(h, r), rouge_l=rouge_l(h, r),
        sentences=len(h), hyp_tokens=sum(map(len, h)), ref_tokens=sum(map(len, r)),
    )
