"""Corpora, JSONL I/O, splitting and the synthetic toy-language generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .bpe import normalize

KIND_FIELDS = {
    "mono": ("text",),
    "qg": ("sentence", "question"),
    "parallel": ("src", "tgt"),
}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class MonoCorpus:
    lang: str
    lines: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.lines)


@dataclass(frozen=True)
class QGCorpus:
    pairs: tuple[tuple[str, str], ...]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sentences(self) -> list[str]:
        return [s for s, _ in self.pairs]

    @property
    def questions(self) -> list[str]:
        return [q for _, q in self.pairs]


@dataclass(frozen=True)
class ParallelCorpus:
    """Aligned (primary, secondary) sentence pairs."""

    pairs: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.pairs)


def _check_record(record, kind: str, min_tokens: int, max_tokens: int | None) -> tuple[str, ...]:
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object")
    values = []
    for name in KIND_FIELDS[kind]:
        if name not in record:
            raise CorpusError(f"missing field {name!r}")
        value = record[name]
        if not isinstance(value, str):
            raise CorpusError(f"field {name!r} is not a string")
        value = normalize(value)
        if not value:
            raise CorpusError(f"field {name!r} is empty")
        n = len(value.split())
        if kind == "mono" and (n < min_tokens or (max_tokens is not None and n > max_tokens)):
            raise CorpusError(f"{n} tokens outside [{min_tokens}, {max_tokens}]")
        values.append(value)
    return tuple(values)


def _scan(path, kind: str, min_tokens: int = 1, max_tokens: int | None = None):
    if kind not in KIND_FIELDS:
        raise ValueError(f"unknown corpus kind {kind!r}; expected one of {sorted(KIND_FIELDS)}")
    records, errors, count = [], [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            count += 1
            try:
                records.append(_check_record(json.loads(line), kind, min_tokens, max_tokens))
            except (json.JSONDecodeError, CorpusError) as exc:
                errors.append((lineno, str(exc)))
    return records, errors, count


def load_corpus(path, kind: str, lang: str = "pri", split: str = "train",
                min_tokens: int = 1, max_tokens: int | None = None):
    """Read a JSONL corpus of ``kind`` mono / qg / parallel."""
    records, errors, count = _scan(path, kind, min_tokens, max_tokens)
    if errors:
        shown = "; ".join(f"line {n}: {msg}" for n, msg in errors[:5])
        raise CorpusError(f"{path}: {len(errors)} malformed line(s): {shown}")
    if count == 0:
        raise CorpusError(f"{path}: corpus file is empty")
    if kind == "mono":
        return MonoCorpus(lang, tuple(r[0] for r in records))
    if kind == "qg":
        return QGCorpus(tuple(records), split)
    return ParallelCorpus(tuple(records))


def validate_corpus(path, kind: str) -> dict:
    """Schema report without raising; reads the file line by line."""
    _, errors, count = _scan(path, kind)
    return {
        "path": str(path),
        "kind": kind,
        "lines": count,
        "valid": count - len(errors),
        "ok": count > 0 and not errors,
        "errors": [{"line": n, "message": m} for n, m in errors[:5]],
    }


def _records(corpus) -> Iterator[dict]:
    if isinstance(corpus, MonoCorpus):
        for line in corpus.lines:
            yield {"text": line}
    elif isinstance(corpus, QGCorpus):
        for s, q in corpus.pairs:
            yield {"sentence": s, "question": q}
    elif isinstance(corpus, ParallelCorpus):
        for s, t in corpus.pairs:
            yield {"src": s, "tgt": t}
    else:
        raise TypeError(f"not a corpus: {type(corpus).__name__}")


def save_corpus(corpus, path) -> None:
    text = "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in _records(corpus))
    Path(path).write_bytes(text.encode("utf-8"))


def split_corpus(corpus: QGCorpus, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, QGCorpus]:
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    n = len(corpus)
    n_train = int(round(fractions[0] * n))
    n_dev = int(round(fractions[1] * n))
    sizes = {"train": n_train, "dev": n_dev, "test": n - n_train - n_dev}
    if min(sizes.values()) <= 0:
        raise ValueError(f"split of {n} items by {fractions} leaves an empty part: {sizes}")
    order = np.random.default_rng(seed).permutation(n)
    out, start = {}, 0
    for name in ("train", "dev", "test"):
        idx = order[start:start + sizes[name]]
        out[name] = QGCorpus(tuple(corpus.pairs[i] for i in idx), name)
        start += sizes[name]
    return out


# toy languages --------------------------------------------------------------

_LATIN_ONSETS = list("bdfgklmnprstvz")
_LATIN_VOWELS = list("aeiou")
_DEVA_CONSONANTS = [chr(c) for c in range(0x0915, 0x0939 + 1)]
_DEVA_SIGNS = ["", "ा", "ि", "ी", "ु", "े", "ो"]

SEC_FUNCTION_WORDS = ("the", "of", "in", "and")
SEC_TEMPLATE = (("what", "about"), ("?",))


@dataclass(frozen=True)
class Script:
    """Surface form of the primary toy language."""

    function_words: tuple[str, ...]
    template: tuple[tuple[str, ...], tuple[str, ...]]
    copy: bool = False  # primary is the secondary language itself


SCRIPTS = {
    # romanised: content words share the secondary language's syllable inventory
    "latin": Script(("ka", "ki", "me", "aur"), (("kya",), ("ke", "bare", "me", "?"))),
    "devanagari": Script(("का", "की", "में", "और"), (("क्या",), ("के", "बारे", "में", "?"))),
    "copy": Script(SEC_FUNCTION_WORDS, SEC_TEMPLATE, copy=True),
}


@dataclass
class ToyLexicon:
    """Word bijection between the two toy languages plus the question rule."""

    sec_words: tuple[str, ...]
    pri_words: tuple[str, ...]
    question_len: int
    script: str = "latin"
    sec_to_pri: dict[str, str] = field(init=False)
    pri_to_sec: dict[str, str] = field(init=False)

    def __post_init__(self):
        sec = self.sec_words + SEC_FUNCTION_WORDS
        pri = self.pri_words + self.function_words("pri")
        self.sec_to_pri = dict(zip(sec, pri))
        self.pri_to_sec = dict(zip(pri, sec))

    def function_words(self, lang: str) -> tuple[str, ...]:
        return SEC_FUNCTION_WORDS if lang == "sec" else SCRIPTS[self.script].function_words

    def translate(self, sentence: str, src: str) -> str:
        """Word-by-word relabelling followed by reversing the word order."""
        table = self.sec_to_pri if src == "sec" else self.pri_to_sec
        words = [table[w] for w in sentence.split()]
        return " ".join(words if SCRIPTS[self.script].copy else reversed(words))

    def question(self, sentence: str, lang: str) -> str:
        """Template around the first ``question_len`` content words."""
        function = set(self.function_words(lang))
        content = [w for w in sentence.split() if w not in function][: self.question_len]
        before, after = SEC_TEMPLATE if lang == "sec" else SCRIPTS[self.script].template
        return " ".join(before + tuple(content) + after)


@dataclass
class ToyLanguages:
    mono_pri: MonoCorpus
    mono_sec: MonoCorpus
    parallel: ParallelCorpus
    qg_pri: QGCorpus
    qg_sec: QGCorpus
    lexicon: ToyLexicon

    def __iter__(self):
        return iter((self.mono_pri, self.mono_sec, self.parallel, self.qg_pri, self.qg_sec))


def _make_words(rng: np.random.Generator, n: int, maker, taken=frozenset()) -> tuple[str, ...]:
    words: list[str] = []
    seen: set[str] = set(taken)
    while len(words) < n:
        w = maker(rng)
        if w not in seen and normalize(w) == w:
            seen.add(w)
            words.append(w)
    return tuple(words)


def _latin_word(rng) -> str:
    return "".join(rng.choice(_LATIN_ONSETS) + rng.choice(_LATIN_VOWELS)
                   for _ in range(int(rng.integers(2, 4))))


def _deva_word(rng) -> str:
    return "".join(rng.choice(_DEVA_CONSONANTS) + rng.choice(_DEVA_SIGNS)
                   for _ in range(int(rng.integers(2, 4))))


def make_lexicon(vocab_size: int, seed: int, question_len: int = 3, script: str = "latin") -> ToyLexicon:
    if script not in SCRIPTS:
        raise ValueError(f"unknown script {script!r}; expected one of {sorted(SCRIPTS)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    sec = _make_words(rng, vocab_size, _latin_word)
    if SCRIPTS[script].copy:
        return ToyLexicon(sec, sec, question_len, script)
    maker = _latin_word if script == "latin" else _deva_word
    pri = _make_words(rng, vocab_size, maker, taken=set(sec))
    return ToyLexicon(sec, pri, question_len, script)


def sample_sentences(lexicon: ToyLexicon, n: int, rng: np.random.Generator,
                     min_len: int = 4, max_len: int = 10, function_rate: float = 0.25,
                     zipf: float = 0.7) -> list[str]:
    """Secondary-language sentences with a Zipf-like content-word distribution.

    Every sentence carries at least ``question_len`` content words.
    """
    if min_len < lexicon.question_len:
        raise ValueError("min_len must leave room for the question words")
    weights = 1.0 / np.arange(1, len(lexicon.sec_words) + 1) ** zipf
    weights /= weights.sum()
    out = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        is_function = rng.random(length) < function_rate
        # first question_len content slots are forced so the rule always applies
        content_positions = np.flatnonzero(~is_function)
        while len(content_positions) < lexicon.question_len:
            is_function[rng.choice(np.flatnonzero(is_function))] = False
            content_positions = np.flatnonzero(~is_function)
        words = [
            SEC_FUNCTION_WORDS[int(rng.integers(len(SEC_FUNCTION_WORDS)))] if f
            else lexicon.sec_words[int(rng.choice(len(weights), p=weights))]
            for f in is_function
        ]
        out.append(" ".join(words))
    return out


def toy_qg_pairs(lexicon: ToyLexicon, n: int, lang: str, seed: int, *, min_len: int = 4,
                 max_len: int = 10) -> QGCorpus:
    """Fresh QG pairs from a stream independent of every training corpus."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 303, 0 if lang == "pri" else 1]))
    sents = sample_sentences(lexicon, n, rng, min_len, max_len)
    if lang == "pri":
        sents = [lexicon.translate(s, "sec") for s in sents]
    return QGCorpus(tuple((s, lexicon.question(s, lang)) for s in sents), "dev")


def gen_toy_languages(n_pairs: int, vocab_size: int, seed: int, *, min_len: int = 4,
                      max_len: int = 10, question_len: int = 3, n_mono: int | None = None,
                      n_parallel: int | None = None, n_qg_sec: int | None = None,
                      script: str = "latin") -> ToyLanguages:
    """Two synthetic languages related by a word bijection and word-order reversal.

    ``n_pairs`` primary QG pairs are produced; the other corpora default to the
    same size. The secondary language is the base; every primary sentence is
    the relabelled, reversed image of a secondary one. ``script`` picks the
    primary surface form: "latin" words are disjoint from the secondary ones
    but built from the same syllables; "devanagari" shares no characters;
    "copy" makes the primary language an identical copy of the secondary.
    """
    if vocab_size < 8:
        raise ValueError("vocab_size must be at least 8")
    lex = make_lexicon(vocab_size, seed, question_len, script)
    n_mono = n_pairs if n_mono is None else n_mono
    n_parallel = n_pairs if n_parallel is None else n_parallel
    n_qg_sec = n_pairs if n_qg_sec is None else n_qg_sec
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 202]).spawn(5)]

    def sample(i, n):
        return sample_sentences(lex, n, streams[i], min_len, max_len)

    mono_pri = MonoCorpus("pri", tuple(lex.translate(s, "sec") for s in sample(0, n_mono)))
    mono_sec = MonoCorpus("sec", tuple(sample(1, n_mono)))
    parallel = ParallelCorpus(tuple((lex.translate(s, "sec"), s) for s in sample(2, n_parallel)))
    pri_sents = [lex.translate(s, "sec") for s in sample(3, n_pairs)]
    qg_pri = QGCorpus(tuple((s, lex.question(s, "pri")) for s in pri_sents))
    qg_sec = QGCorpus(tuple((s, lex.question(s, "sec")) for s in sample(4, n_qg_sec)))
    return ToyLanguages(mono_pri, mono_sec, parallel, qg_pri, qg_sec, lex)
