"""Unsupervised pretraining, parallel fine-tuning and joint supervised QG.

A :class:`Trainer` owns one model, its per-group Adam state and the metrics
log. Every optimiser step goes through :func:`clqg.xmodel.route`, so a pass
only ever moves the groups its (task, languages) combination is allowed to.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .bpe import BpeModel
from .decoding import batch_generate, greedy_ids, pad_batch
from .metrics import bleu
from .optim import Adam
from .transformer import ModelConfig
from .xmodel import CrossLingualTransformer, route, save_checkpoint

log = logging.getLogger(__name__)

PHASE_SEEDS = {"init": 0, "pretrain": 1, "finetune": 2, "qg": 3, "noise": 4}
Words = list[list[int]]  # one sentence as per-word subword ids


@dataclass(frozen=True)
class TrainConfig:
    d_model: int = 300
    n_heads: int = 6
    private_layers: int = 2
    shared_layers: int = 2
    ffn_dim: int | None = None
    dropout: float = 0.2
    lr: float = 1e-5
    batch_size: int = 64
    noise_k: int = 3
    full_shuffle: bool = False
    max_len: int = 50
    max_positions: int = 256
    mask_diagonal: str = "strict"
    pretrain_epochs: int = 15
    finetune_epochs: int = 1
    qg_epochs: int = 30
    eval_every: int = 1
    patience: int = 3
    min_delta: float = 1e-3
    num_merges: int = 512
    carry_moments: bool = False
    check_isolation_every: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("d_model", "n_heads", "private_layers", "shared_layers", "batch_size",
                     "max_len", "eval_every", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_k < 0:
            raise ValueError("noise_k must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    @classmethod
    def toy(cls, **overrides) -> TrainConfig:
        """Desk-scale preset used by the toy-language experiments."""
        base = dict(d_model=64, n_heads=4, ffn_dim=256, dropout=0.1, lr=1e-3, batch_size=16,
                    pretrain_epochs=3, qg_epochs=40, patience=10, num_merges=512, max_len=24,
                    max_positions=64)
        base.update(overrides)
        return cls(**base)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, d_model=self.d_model, n_heads=self.n_heads,
                           private_layers=self.private_layers, shared_layers=self.shared_layers,
                           ffn_dim=self.ffn_dim, dropout=self.dropout,
                           max_positions=self.max_positions, mask_diagonal=self.mask_diagonal)

    def replace(self, **changes) -> TrainConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingExample:
    src_ids: list[int]
    tgt_ids: list[int]
    lang_in: str
    lang_out: str
    task: str


class MetricsLog:
    """Structured per-step records, optionally mirrored to a JSONL file."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, **record) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def of(self, **match) -> list[dict]:
        return [r for r in self.records if all(r.get(k) == v for k, v in match.items())]


def permute_noise(seq: Sequence, k: int, rng: np.random.Generator, protected=(),
                  full_shuffle: bool = False) -> list:
    """Shuffle ``seq`` so that no item moves more than ``k`` places.

    Each position i gets the key i + U[0, k+1) and items are sorted by key.
    Leading/trailing items found in ``protected`` (e.g. BOS/EOS) stay put.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    items = list(seq)
    lo, hi = 0, len(items)
    while lo < hi and _is_protected(items[lo], protected):
        lo += 1
    while hi > lo and _is_protected(items[hi - 1], protected):
        hi -= 1
    body = items[lo:hi]
    if len(body) < 2:
        return items
    if full_shuffle:
        order = rng.permutation(len(body))
    else:
        keys = np.arange(len(body)) + rng.uniform(0.0, k + 1.0, size=len(body))
        order = np.argsort(keys, kind="stable")
    return items[:lo] + [body[i] for i in order] + items[hi:]


def _is_protected(item, protected) -> bool:
    return not isinstance(item, (list, tuple)) and item in protected


def batches(n: int, batch_size: int, rng: np.random.Generator,
            lengths: Sequence[int] | None = None) -> list[np.ndarray]:
    """Shuffled index batches; with ``lengths``, items are length-bucketed first."""
    order = rng.permutation(n)
    if lengths is not None:
        pool = batch_size * 16
        order = np.concatenate([
            sorted(order[i:i + pool], key=lambda j: (lengths[j], j)) for i in range(0, n, pool)
        ]).astype(np.int64)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [out[i] for i in rng.permutation(len(out))]


def _cycle(n: int, batch_size: int, rng: np.random.Generator, lengths=None) -> Iterator[np.ndarray]:
    while True:
        yield from batches(n, batch_size, rng, lengths)


def flatten(words: Words) -> list[int]:
    return [i for w in words for i in w]


class Trainer:
    def __init__(self, model: CrossLingualTransformer, bpe: BpeModel, config: TrainConfig,
                 metrics: MetricsLog | None = None):
        self.model = model
        self.bpe = bpe
        self.config = config
        self.metrics = metrics or MetricsLog()
        self.optimizer = Adam(model.parameter_groups(), lr=config.lr)
        self.global_step = 0
        self.empty_translations = 0
        self.noise_rng = self.phase_rng("noise")

    @classmethod
    def create(cls, bpe: BpeModel, config: TrainConfig, metrics: MetricsLog | None = None) -> Trainer:
        model = CrossLingualTransformer(config.model_config(len(bpe)), seed=config.seed,
                                        pad_id=bpe.pad_id)
        return cls(model, bpe, config, metrics)

    def phase_rng(self, phase: str) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.config.seed, PHASE_SEEDS[phase]]))

    # encoding helpers --------------------------------------------------------

    def words(self, text: str) -> Words:
        return self.bpe.encode_words(text)

    def source(self, ids: Sequence[int], lang: str) -> list[int]:
        return [self.bpe.lang_id(lang)] + list(ids) + [self.bpe.eos_id]

    def target(self, ids: Sequence[int]) -> list[int]:
        return [self.bpe.bos_id] + list(ids) + [self.bpe.eos_id]

    def _clip(self, ids: list[int]) -> list[int]:
        # room for tag/BOS and EOS inside the positional table
        return ids[: self.config.max_positions - 2]

    # single steps ------------------------------------------------------------

    def train_examples(self, examples: Sequence[TrainingExample], phase: str) -> float:
        first = examples[0]
        rt = route(first.task, first.lang_in, first.lang_out)
        src = pad_batch([e.src_ids for e in examples], self.bpe.pad_id)
        tgt = pad_batch([e.tgt_ids for e in examples], self.bpe.pad_id)
        check = self.config.check_isolation_every and self.global_step % self.config.check_isolation_every == 0
        frozen = {}
        if check:
            frozen = {g: self.model.checksum(g) for g in self.model.groups if g not in rt.storage_groups}
        self.model.train()
        logits = self.model.forward(src, rt.lang_in, rt.lang_out, tgt[:, :-1])
        loss = T.cross_entropy(logits, tgt[:, 1:], self.bpe.pad_id)
        self.model.zero_grad()
        loss.backward()
        self.optimizer.step(rt.storage_groups)
        self.global_step += 1
        if check:
            moved = [g for g, h in frozen.items() if self.model.checksum(g) != h]
            if moved:
                raise AssertionError(f"{rt.task} {rt.lang_in}->{rt.lang_out} step mutated {moved}")
        value = float(loss.data)
        self.metrics.write(phase=phase, task=rt.task, direction=f"{rt.lang_in}->{rt.lang_out}",
                           loss=value, lr=self.config.lr, step=self.global_step)
        return value

    def denoise_step(self, batch: Sequence[Words], lang: str, phase: str = "pretrain") -> float:
        """Reconstruct each sentence from a locally shuffled copy of its words."""
        examples = []
        for words in batch:
            noisy = permute_noise(words, self.config.noise_k, self.noise_rng,
                                  full_shuffle=self.config.full_shuffle)
            examples.append(TrainingExample(self.source(self._clip(flatten(noisy)), lang),
                                            self.target(self._clip(flatten(words))), lang, lang, "AE"))
        return self.train_examples(examples, phase)

    def translate_ids(self, sources: Sequence[list[int]], lang_in: str, lang_out: str) -> list[list[int]]:
        """Greedy translation of bare subword-id sequences, without gradients."""
        longest = max(len(s) for s in sources)
        max_len = max(1, min(self.config.max_len, 2 * longest + 4, self.config.max_positions - 1))
        outs = greedy_ids(self.model, [self.source(s, lang_in) for s in sources], lang_in, lang_out,
                          max_len, self.bpe.bos_id, self.bpe.eos_id)
        n_special = 6
        return [[t for t in toks if t >= n_special] for toks, _, _ in outs]

    def backtranslate_step(self, batch: Sequence[Words], direction: tuple[str, str],
                           phase: str = "pretrain") -> float:
        """``batch`` is monolingual text in ``direction[1]``.

        It is translated into ``direction[0]`` with the current weights and the
        model is then trained to recover the original from that pseudo source.
        """
        lang_in, lang_out = direction
        originals = [self._clip(flatten(w)) for w in batch]
        pseudo = self.translate_ids(originals, lang_out, lang_in)
        empty = sum(1 for p in pseudo if not p)
        if empty:
            self.empty_translations += empty
            log.debug("%d empty back-translations replaced by <unk>", empty)
        examples = [
            TrainingExample(self.source(self._clip(p) or [self.bpe.unk_id], lang_in),
                            self.target(o), lang_in, lang_out, "BT")
            for p, o in zip(pseudo, originals)
        ]
        return self.train_examples(examples, phase)

    def mt_step(self, pairs: Sequence[tuple[Words, Words]], lang_in: str, lang_out: str,
                phase: str = "finetune") -> float:
        examples = [TrainingExample(self.source(self._clip(flatten(s)), lang_in),
                                    self.target(self._clip(flatten(t))), lang_in, lang_out, "MT")
                    for s, t in pairs]
        return self.train_examples(examples, phase)

    def qg_step(self, pairs: Sequence[tuple[Words, Words]], lang: str, phase: str = "qg") -> float:
        examples = [TrainingExample(self.source(self._clip(flatten(s)), lang),
                                    self.target(self._clip(flatten(q))), lang, lang, "QG")
                    for s, q in pairs]
        return self.train_examples(examples, phase)

    # phases -----------------------------------------------------------------

    def _start_phase(self) -> None:
        if not self.config.carry_moments:
            self.optimizer.reset()

    def checkpoint(self, checkpoint_dir, name: str) -> None:
        if checkpoint_dir is not None:
            save_checkpoint(self.model, Path(checkpoint_dir) / name, self.bpe.fingerprint())

    def pretrain(self, mono_pri: Sequence[str], mono_sec: Sequence[str] | None = None,
                 epochs: int | None = None, checkpoint_dir=None,
                 use_backtranslation: bool = True) -> list[dict]:
        """Denoising autoencoding (+ back-translation when both languages are given).

        An iteration runs AE(pri), AE(sec), BT(sec->pri), BT(pri->sec) on one
        batch per language. Stops at the epoch budget or when the epoch-mean AE
        loss has not improved by ``min_delta`` for ``patience`` epochs.
        """
        if not mono_pri:
            raise ValueError("pretraining needs a non-empty primary corpus")
        cfg = self.config
        epochs = cfg.pretrain_epochs if epochs is None else epochs
        self._start_phase()
        rng = self.phase_rng("pretrain")
        pri = [self.words(s) for s in mono_pri]
        sec = [self.words(s) for s in mono_sec] if mono_sec else None
        pri_len = [len(flatten(w)) for w in pri]
        sec_iter = _cycle(len(sec), cfg.batch_size, rng, [len(flatten(w)) for w in sec]) if sec else None
        history, best, stale = [], math.inf, 0
        for epoch in range(1, epochs + 1):
            sums: dict[str, list[float]] = {}
            for idx in batches(len(pri), cfg.batch_size, rng, pri_len):
                pri_batch = [pri[i] for i in idx]
                sums.setdefault("AE pri", []).append(self.denoise_step(pri_batch, "pri"))
                if sec is not None:
                    sec_batch = [sec[i] for i in next(sec_iter)]
                    sums.setdefault("AE sec", []).append(self.denoise_step(sec_batch, "sec"))
                    if use_backtranslation:
                        sums.setdefault("BT sec->pri", []).append(
                            self.backtranslate_step(pri_batch, ("sec", "pri")))
                        sums.setdefault("BT pri->sec", []).append(
                            self.backtranslate_step(sec_batch, ("pri", "sec")))
            summary = {k: float(np.mean(v)) for k, v in sums.items()}
            history.append(summary)
            self.metrics.write(phase="pretrain", event="epoch", epoch=epoch, step=self.global_step,
                               **{k.replace(" ", "_"): v for k, v in summary.items()})
            self.checkpoint(checkpoint_dir, f"pretrain-epoch{epoch:03d}")
            ae = float(np.mean([summary[k] for k in summary if k.startswith("AE")]))
            if ae < best - cfg.min_delta:
                best, stale = ae, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        return history

    def finetune_parallel(self, parallel: Sequence[tuple[str, str]], epochs: int | None = None,
                          checkpoint_dir=None) -> list[float]:
        """Supervised translation on (primary, secondary) pairs.

        Even-numbered batches train pri->sec, odd ones sec->pri.
        """
        if not parallel:
            raise ValueError("parallel fine-tuning needs at least one pair")
        cfg = self.config
        epochs = cfg.finetune_epochs if epochs is None else epochs
        self._start_phase()
        rng = self.phase_rng("finetune")
        pairs = [(self.words(p), self.words(s)) for p, s in parallel]
        lengths = [len(flatten(p)) for p, _ in pairs]
        losses, parity = [], 0
        for _ in range(epochs):
            for idx in batches(len(pairs), cfg.batch_size, rng, lengths):
                chunk = [pairs[i] for i in idx]
                if parity % 2 == 0:
                    losses.append(self.mt_step(chunk, "pri", "sec"))
                else:
                    losses.append(self.mt_step([(s, p) for p, s in chunk], "sec", "pri"))
                parity += 1
        self.checkpoint(checkpoint_dir, "finetune")
        return losses

    def dev_bleu(self, dev: Sequence[tuple[str, str]], lang: str = "pri") -> float:
        preds = batch_generate(self.model, self.bpe, [s for s, _ in dev], lang, self.config.max_len)
        return bleu([p.text for p in preds], [q for _, q in dev], 4)

    def train_qg(self, qg_pri: Sequence[tuple[str, str]], qg_sec: Sequence[tuple[str, str]] | None = None,
                 dev: Sequence[tuple[str, str]] | None = None, epochs: int | None = None,
                 max_steps: int | None = None, checkpoint_dir=None,
                 on_eval: Callable[[int, float], None] | None = None) -> dict:
        """Joint sentence-to-question training, alternating primary and secondary batches.

        With ``dev`` pairs, BLEU-4 is measured every ``eval_every`` epochs, the
        best weights are restored at the end and training stops after
        ``patience`` evaluations without improvement.
        """
        if not qg_pri:
            raise ValueError("supervised QG needs primary-language pairs")
        cfg = self.config
        epochs = cfg.qg_epochs if epochs is None else epochs
        self._start_phase()
        rng = self.phase_rng("qg")
        pri = [(self.words(s), self.words(q)) for s, q in qg_pri]
        pri_len = [len(flatten(s)) for s, _ in pri]
        sec = [(self.words(s), self.words(q)) for s, q in qg_sec] if qg_sec else None
        sec_iter = _cycle(len(sec), cfg.batch_size, rng, [len(flatten(s)) for s, _ in sec]) if sec else None
        best = {"bleu4": -1.0, "epoch": 0, "state": None}
        stale, done, epoch = 0, False, 0
        pri_steps = 0
        while epoch < epochs and not done:
            epoch += 1
            for idx in batches(len(pri), cfg.batch_size, rng, pri_len):
                self.qg_step([pri[i] for i in idx], "pri")
                pri_steps += 1
                if sec is not None:
                    self.qg_step([sec[i] for i in next(sec_iter)], "sec")
                if max_steps is not None and pri_steps >= max_steps:
                    done = True
                    break
            if dev and (epoch % cfg.eval_every == 0 or done or epoch == epochs):
                score = self.dev_bleu(dev)
                self.metrics.write(phase="qg", event="dev_eval", epoch=epoch, bleu4=score,
                                   step=self.global_step)
                if on_eval:
                    on_eval(epoch, score)
                if score > best["bleu4"]:
                    best = {"bleu4": score, "epoch": epoch, "state": self.model.state_dict()}
                    stale = 0
                    self.checkpoint(checkpoint_dir, "qg-best")
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        break
        if best["state"] is not None:
            self.model.load_state_dict(best["state"])
        self.checkpoint(checkpoint_dir, "qg-final")
        return {"best_bleu4": best["bleu4"] if dev else None, "best_epoch": best["epoch"],
                "epochs": epoch, "primary_steps": pri_steps}

    def corpus_loss(self, pairs: Sequence[tuple[str, str]], lang_in: str, lang_out: str,
                    task: str = "QG") -> float:
        """Token-averaged loss without dropout or parameter updates."""
        route(task, lang_in, lang_out)
        was = self.model.training
        self.model.eval()
        total, count = 0.0, 0
        try:
            with T.no_grad():
                for start in range(0, len(pairs), self.config.batch_size):
                    chunk = pairs[start:start + self.config.batch_size]
                    src = pad_batch([self.source(self.bpe.encode(s), lang_in) for s, _ in chunk], 0)
                    tgt = pad_batch([self.target(self.bpe.encode(q)) for _, q in chunk], 0)
                    logits = self.model.forward(src, lang_in, lang_out, tgt[:, :-1])
                    n = int((tgt[:, 1:] != self.bpe.pad_id).sum())
                    total += float(T.cross_entropy(logits, tgt[:, 1:], self.bpe.pad_id).data) * n
                    count += n
        finally:
            self.model.train(was)
        return total / count
