"""Greedy left-to-right generation.

Each step feeds the whole prefix back through the decoder and appends the
argmax token (lowest id on ties). The encoder runs once per batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .bpe import BpeModel, normalize

DEFAULT_MAX_LEN = 50


@dataclass
class DecodeResult:
    tokens: list[int]
    text: str
    per_step_logprob: list[float]
    terminated: str  # "EOS", "max_len" or "error"
    error: str | None = field(default=None)

    @property
    def logprob_sum(self) -> float:
        return float(sum(self.per_step_logprob))


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def source_ids(bpe: BpeModel, text: str, lang: str) -> list[int]:
    """Language tag, subword ids, EOS."""
    return [bpe.lang_id(lang)] + bpe.encode(text) + [bpe.eos_id]


def greedy_ids(model, sources: Sequence[Sequence[int]], lang_in: str, lang_out: str,
               max_len: int, bos_id: int, eos_id: int) -> list[tuple[list[int], list[float], bool]]:
    """Batched greedy decoding on id sequences.

    Returns ``(tokens, logprobs, hit_eos)`` per source; ``tokens`` keeps the
    EOS when one was produced.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    was_training = model.training
    model.eval()
    try:
        with T.no_grad():
            src = pad_batch(sources, model.pad_id)
            memory = model.encode(src, lang_in)
            batch = src.shape[0]
            prefix = np.full((batch, 1), bos_id, dtype=np.int64)
            done = np.zeros(batch, dtype=bool)
            tokens = [[] for _ in range(batch)]
            logps = [[] for _ in range(batch)]
            for _ in range(max_len):
                logits = model.decode(memory, prefix, lang_out, src).data[:, -1, :].astype(np.float64)
                shifted = logits - logits.max(axis=1, keepdims=True)
                logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
                nxt = logits.argmax(axis=1)
                for b in np.flatnonzero(~done):
                    tokens[b].append(int(nxt[b]))
                    logps[b].append(float(logp[b, nxt[b]]))
                    if nxt[b] == eos_id:
                        done[b] = True
                if done.all():
                    break
                prefix = np.concatenate([prefix, np.where(done, model.pad_id, nxt)[:, None]], axis=1)
    finally:
        model.train(was_training)
    return [(tokens[b], logps[b], bool(tokens[b] and tokens[b][-1] == eos_id)) for b in range(len(tokens))]


def _result(bpe: BpeModel, tokens, logps, hit_eos) -> DecodeResult:
    return DecodeResult(tokens=tokens, text=bpe.decode(tokens), per_step_logprob=logps,
                        terminated="EOS" if hit_eos else "max_len")


def greedy_decode(model, bpe: BpeModel, sentence: str, lang: str,
                  max_len: int = DEFAULT_MAX_LEN, lang_out: str | None = None) -> DecodeResult:
    """Generate from one sentence; the output language defaults to the input one."""
    if not normalize(sentence):
        raise ValueError("input sentence is empty after normalisation")
    ((tokens, logps, hit),) = greedy_ids(model, [source_ids(bpe, sentence, lang)], lang,
                                         lang_out or lang, max_len, bpe.bos_id, bpe.eos_id)
    return _result(bpe, tokens, logps, hit)


def batch_generate(model, bpe: BpeModel, corpus: Sequence[str], lang: str,
                   max_len: int = DEFAULT_MAX_LEN, lang_out: str | None = None,
                   batch_size: int = 64) -> list[DecodeResult]:
    """Order-preserving greedy decoding over ``corpus``; bad lines become error results."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("nothing to generate from: empty corpus")
    results: list[DecodeResult | None] = [None] * len(corpus)
    good = []
    for i, line in enumerate(corpus):
        if not isinstance(line, str) or not normalize(line):
            results[i] = DecodeResult([], "", [], "error", "input sentence is empty after normalisation")
        else:
            good.append(i)
    # length-sorted batches keep padding small; results are put back in order
    good.sort(key=lambda i: (len(corpus[i].split()), i))
    for start in range(0, len(good), batch_size):
        chunk = good[start:start + batch_size]
        outs = greedy_ids(model, [source_ids(bpe, corpus[i], lang) for i in chunk], lang,
                          lang_out or lang, max_len, bpe.bos_id, bpe.eos_id)
        for i, (tokens, logps, hit) in zip(chunk, outs):
            results[i] = _result(bpe, tokens, logps, hit)
    return results


def write_predictions(path, inputs: Sequence[str], results: Sequence[DecodeResult]) -> None:
    lines = []
    for src, res in zip(inputs, results):
        record = {"input": src, "prediction": res.text, "logprob_sum": res.logprob_sum,
                  "terminated": res.terminated}
        if res.error:
            record["error"] = res.error
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_predictions(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
