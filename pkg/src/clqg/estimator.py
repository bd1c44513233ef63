"""scikit-learn style wrapper: sentences in, questions out."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bpe import learn_bpe, normalize
from .decoding import batch_generate
from .metrics import bleu
from .pipeline import TrainingData, phases_for, train_variant
from .training import TrainConfig, Trainer


def check_sentences(X, name: str = "X") -> list[str]:
    """A 1-D collection of non-empty strings, NFC-normalised."""
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of strings, not a single string")
    arr = np.asarray(list(X), dtype=object)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    out = []
    for i, item in enumerate(arr):
        if not isinstance(item, str):
            raise TypeError(f"{name}[{i}] is {type(item).__name__}, expected str")
        text = normalize(item)
        if not text:
            raise ValueError(f"{name}[{i}] is empty after normalisation")
        out.append(text)
    return out


def check_pairs(X, y, name: str = "X") -> list[tuple[str, str]]:
    xs, ys = check_sentences(X, name), check_sentences(y, "y")
    if len(xs) != len(ys):
        raise ValueError(f"{name} and y have inconsistent lengths: {len(xs)} vs {len(ys)}")
    return list(zip(xs, ys))


class CrossLingualQG(BaseEstimator):
    """Primary-language question generator.

    ``fit(X, y)`` takes primary sentences and questions. Depending on
    ``variant``, monolingual, secondary QG and parallel corpora passed as
    keyword arguments feed the earlier phases.
    """

    def __init__(self, variant: str = "clqg", preset: str = "toy", num_merges: int = 512,
                 max_len: int | None = None, seed: int = 0, config: TrainConfig | None = None):
        self.variant = variant
        self.preset = preset
        self.num_merges = num_merges
        self.max_len = max_len
        self.seed = seed
        self.config = config

    def _train_config(self) -> TrainConfig:
        if self.config is not None:
            base = self.config
        elif self.preset == "toy":
            base = TrainConfig.toy()
        elif self.preset == "full":
            base = TrainConfig()
        else:
            raise ValueError(f"unknown preset {self.preset!r}")
        changes = {"seed": self.seed, "num_merges": self.num_merges}
        if self.max_len is not None:
            changes["max_len"] = self.max_len
        return replace(base, **changes)

    def fit(self, X, y, *, mono_pri=None, mono_sec=None, qg_sec=None, parallel=None, dev=None):
        phases = phases_for(self.variant)
        pairs = check_pairs(X, y)
        mono_pri = check_sentences(mono_pri, "mono_pri") if mono_pri is not None else []
        mono_sec = check_sentences(mono_sec, "mono_sec") if mono_sec is not None else []
        qg_sec = check_pairs(*zip(*qg_sec), name="qg_sec") if qg_sec else []
        parallel = check_pairs(*zip(*parallel), name="parallel") if parallel else []
        dev = check_pairs(*zip(*dev), name="dev") if dev else []
        if phases.pretrain and not mono_pri:
            raise ValueError(f"variant {self.variant!r} needs mono_pri for pretraining")
        if phases.secondary and not (mono_sec and qg_sec):
            raise ValueError(f"variant {self.variant!r} needs mono_sec and qg_sec")
        if phases.parallel and not parallel:
            raise ValueError(f"variant {self.variant!r} needs parallel pairs")
        config = self._train_config()
        corpora = [[s for s, _ in pairs], [q for _, q in pairs], mono_pri, mono_sec,
                   [t for pair in qg_sec + parallel for t in pair]]
        self.bpe_ = learn_bpe(corpora, config.num_merges)
        self.trainer_ = Trainer.create(self.bpe_, config)
        data = TrainingData(qg_pri=pairs, mono_pri=mono_pri, mono_sec=mono_sec, qg_sec=qg_sec,
                            parallel=parallel, dev=dev)
        self.history_ = train_variant(self.trainer_, self.variant, data)
        self.model_ = self.trainer_.model
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        sentences = check_sentences(X)
        results = batch_generate(self.model_, self.bpe_, sentences, "pri", self.trainer_.config.max_len)
        return [r.text for r in results]

    def score(self, X, y) -> float:
        """Corpus BLEU-4 of the predicted questions."""
        refs = check_sentences(y, "y")
        return bleu(self.predict(X), refs, 4)
