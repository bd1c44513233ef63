"""Byte-pair-encoding subword model shared by both languages.

Words are split into characters plus an end-of-word marker, and the most
frequent adjacent symbol pair is merged repeatedly. Merging never crosses a
space.
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

EOW = "</w>"
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
LANG_TAGS = {"pri": "<pri>", "sec": "<sec>"}
SPECIALS = (PAD, BOS, EOS, UNK, LANG_TAGS["pri"], LANG_TAGS["sec"])
FORMAT_VERSION = "clqg-bpe/1"


def normalize(text: str) -> str:
    """NFC-normalise and collapse runs of whitespace."""
    return " ".join(unicodedata.normalize("NFC", text).split())


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    vocab: dict[str, int] = field(hash=False)

    def __post_init__(self):
        ids = sorted(self.vocab.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        for i, tok in enumerate(SPECIALS):
            if self.vocab.get(tok) != i:
                raise ValueError(f"special token {tok!r} must have id {i}")
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("duplicate merge rule")
        object.__setattr__(self, "id_to_token", {i: t for t, i in self.vocab.items()})
        object.__setattr__(self, "ranks", {pair: r for r, pair in enumerate(self.merges)})
        object.__setattr__(self, "_segment", lru_cache(maxsize=65536)(self._segment_word))

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def lang_id(self, lang: str) -> int:
        try:
            return self.vocab[LANG_TAGS[lang]]
        except KeyError:
            raise ValueError(f"unknown language tag {lang!r}") from None

    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:16]

    # segmentation ----------------------------------------------------------

    def _segment_word(self, word: str) -> tuple[str, ...]:
        symbols = [c if c in self.vocab else UNK for c in word] + [EOW]
        while len(symbols) > 1:
            best_rank, best_at = None, -1
            for i in range(len(symbols) - 1):
                r = self.ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_at = r, i
            if best_rank is None:
                break
            pair = self.merges[best_rank]
            merged, i = [], 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(pair[0] + pair[1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return tuple(symbols)

    def segment(self, text: str) -> list[list[str]]:
        return [list(self._segment(w)) for w in normalize(text).split()]

    def encode(self, text: str) -> list[int]:
        return [self.vocab[s] for word in self.segment(text) for s in word]

    def encode_words(self, text: str) -> list[list[int]]:
        """Like :meth:`encode` but keeps the subword ids grouped per word."""
        return [[self.vocab[s] for s in word] for word in self.segment(text)]

    def decode(self, ids: Iterable[int]) -> str:
        pieces = []
        for i in ids:
            i = int(i)
            if i not in self.id_to_token:
                raise IndexError(f"token id {i} outside vocabulary of size {len(self.vocab)}")
            if i < len(SPECIALS):
                continue
            pieces.append(self.id_to_token[i])
        return "".join(pieces).replace(EOW, " ").strip()

    # persistence -----------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"#{FORMAT_VERSION} merges={len(self.merges)} vocab={len(self.vocab)}"]
        lines += [f"{a} {b}" for a, b in self.merges]
        lines += [f"{tok}\t{i}" for tok, i in sorted(self.vocab.items(), key=lambda kv: kv[1])]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> BpeModel:
        lines = text.split("\n")
        header = lines[0].split()
        if not header or header[0] != "#" + FORMAT_VERSION:
            raise ValueError(f"not a {FORMAT_VERSION} model file")
        fields = dict(item.split("=", 1) for item in header[1:])
        n_merges, n_vocab = int(fields["merges"]), int(fields["vocab"])
        body = lines[1:]
        if len(body) < n_merges + n_vocab:
            raise ValueError("truncated BPE model file")
        merges = tuple(tuple(line.split(" ")) for line in body[:n_merges])
        vocab = {}
        for line in body[n_merges:n_merges + n_vocab]:
            tok, idx = line.rsplit("\t", 1)
            vocab[tok] = int(idx)
        return cls(merges=merges, vocab=vocab)

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def load(cls, path) -> BpeModel:
        return cls.loads(Path(path).read_bytes().decode("utf-8"))


def _pair_counts(words: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for symbols, freq in words.items():
        for pair in zip(symbols, symbols[1:]):
            counts[pair] += freq
    return counts


def _apply_merge(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out, i = [], 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(pair[0] + pair[1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(corpora: Sequence[Iterable[str]], num_merges: int) -> BpeModel:
    """Learn one joint merge table over every corpus.

    Ties between equally frequent pairs go to the lexicographically smallest
    pair. Pairs whose concatenation is already a vocabulary symbol are
    skipped so every merge adds exactly one entry.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be non-negative")
    word_freq: Counter = Counter()
    for corpus in corpora:
        for line in corpus:
            word_freq.update(normalize(line).split())
    if not word_freq:
        raise ValueError("cannot learn BPE from an empty corpus")

    chars = sorted({c for w in word_freq for c in w})
    symbols_seen = set(chars) | {EOW} | set(SPECIALS)
    words = {tuple(w) + (EOW,): f for w, f in word_freq.items()}
    merges: list[tuple[str, str]] = []
    counts = _pair_counts(words)
    while len(merges) < num_merges:
        candidates = [(c, p) for p, c in counts.items()
                      if c >= 2 and p[0] + p[1] not in symbols_seen]
        if not candidates:
            break
        best_count = max(c for c, _ in candidates)
        pair = min(p for c, p in candidates if c == best_count)
        merges.append(pair)
        symbols_seen.add(pair[0] + pair[1])
        changed = {}
        for syms, f in words.items():
            if pair[0] in syms and pair[1] in syms:
                new = _apply_merge(syms, pair)
                if new != syms:
                    changed[syms] = (new, f)
        for old, (new, f) in changed.items():
            for p in zip(old, old[1:]):
                counts[p] -= f
            del words[old]
            words[new] = words.get(new, 0) + f
            for p in zip(new, new[1:]):
                counts[p] += f
        counts = Counter({p: c for p, c in counts.items() if c > 0})

    vocab = {tok: i for i, tok in enumerate(SPECIALS)}
    for sym in chars + [EOW] + [a + b for a, b in merges]:
        vocab[sym] = len(vocab)
    return BpeModel(merges=tuple(merges), vocab=vocab)


class BpeTokenizer(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit`` learns merges, ``transform`` maps text to ids."""

    def __init__(self, num_merges: int = 512):
        self.num_merges = num_merges

    def fit(self, X, y=None):
        self.model_ = learn_bpe([list(X)], self.num_merges)
        self.vocab_size_ = len(self.model_)
        return self

    def transform(self, X) -> list[list[int]]:
        check_is_fitted(self, "model_")
        return [self.model_.encode(x) for x in X]

    def inverse_transform(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        return [self.model_.decode(ids) for ids in X]
