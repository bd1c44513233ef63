"""Model-variant presets, config resolution, run manifests and the toy suite."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

from .bpe import BpeModel, learn_bpe
from .data import QGCorpus, ToyLanguages, gen_toy_languages, toy_qg_pairs
from .training import MetricsLog, TrainConfig, Trainer

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class Phases:
    pretrain: bool
    secondary: bool  # secondary monolingual pretraining, back-translation and QG pairs
    parallel: bool


VARIANTS = {
    "transformer": Phases(pretrain=False, secondary=False, parallel=False),
    "transformer+pretraining": Phases(pretrain=True, secondary=False, parallel=False),
    "clqg": Phases(pretrain=True, secondary=True, parallel=False),
    "clqg+parallel": Phases(pretrain=True, secondary=True, parallel=True),
}
PRESETS = ("toy", "full")


def phases_for(variant: str) -> Phases:
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; expected one of {list(VARIANTS)}") from None


# configuration ----------------------------------------------------------------

_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


def load_config_file(path) -> dict:
    """Flat TOML key/value file; a ``[train]`` table is merged into the top level."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    values = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    values.update(raw.get("train", {}))
    unknown = set(values) - _TRAIN_FIELDS - {"variant", "preset"}
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return values


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> tuple[str, TrainConfig]:
    """Merge preset, config file and flags (flags win). Returns (variant, config)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    preset = merged.pop("preset", "toy")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    variant = merged.pop("variant", "clqg")
    phases_for(variant)
    base = TrainConfig.toy() if preset == "toy" else TrainConfig()
    return variant, replace(base, **merged)


# manifests ---------------------------------------------------------------------

def git_blob_hash(data: bytes) -> str:
    """The object id ``git hash-object`` would assign to ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_hash(values: dict) -> str:
    return hashlib.sha256(json.dumps(values, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir, command: str, config: dict, seed: int, inputs: dict[str, str | Path]) -> dict:
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {name: {"path": str(p), "blob": git_blob_hash(Path(p).read_bytes())}
                   for name, p in sorted(inputs.items())},
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"manifest-{command}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


# running a variant -------------------------------------------------------------

@dataclass
class TrainingData:
    qg_pri: Sequence[tuple[str, str]]
    mono_pri: Sequence[str] = ()
    mono_sec: Sequence[str] = ()
    qg_sec: Sequence[tuple[str, str]] = ()
    parallel: Sequence[tuple[str, str]] = ()
    dev: Sequence[tuple[str, str]] = ()


def pretrain_for(trainer: Trainer, variant: str, data: TrainingData, checkpoint_dir=None) -> None:
    """Unsupervised phases of ``variant`` (nothing for the plain transformer)."""
    phases = phases_for(variant)
    if phases.pretrain:
        trainer.pretrain(data.mono_pri, data.mono_sec if phases.secondary else None,
                         checkpoint_dir=checkpoint_dir)
    if phases.parallel:
        trainer.finetune_parallel(data.parallel, checkpoint_dir=checkpoint_dir)


def train_variant(trainer: Trainer, variant: str, data: TrainingData, checkpoint_dir=None,
                  pretrained: bool = False, use_secondary_qg: bool | None = None) -> dict:
    """All phases of ``variant``; ``pretrained`` skips the unsupervised ones.

    ``use_secondary_qg`` overrides whether secondary QG pairs join the
    supervised phase (the default follows the variant).
    """
    phases = phases_for(variant)
    if not pretrained:
        pretrain_for(trainer, variant, data, checkpoint_dir)
    secondary_qg = phases.secondary if use_secondary_qg is None else use_secondary_qg
    return trainer.train_qg(data.qg_pri, data.qg_sec if secondary_qg else None,
                            dev=data.dev or None, checkpoint_dir=checkpoint_dir)


# toy suite ----------------------------------------------------------------------

@dataclass
class ToySuite:
    """Toy corpora, an independent primary dev set and a BPE model over everything."""

    langs: ToyLanguages
    dev: QGCorpus
    bpe: BpeModel
    seed: int

    @classmethod
    def build(cls, seed: int, n_pairs: int = 1000, vocab_size: int = 1000, n_mono: int = 2000,
              n_qg_sec: int = 2000, n_dev: int = 200, num_merges: int = 512,
              script: str = "latin") -> ToySuite:
        langs = gen_toy_languages(n_pairs, vocab_size, seed, n_mono=n_mono, n_parallel=n_mono,
                                  n_qg_sec=n_qg_sec, script=script)
        dev = toy_qg_pairs(langs.lexicon, n_dev, "pri", seed)
        corpora = [langs.mono_pri.lines, langs.mono_sec.lines,
                   [p for p, _ in langs.parallel.pairs], [s for _, s in langs.parallel.pairs],
                   langs.qg_pri.sentences, langs.qg_pri.questions,
                   langs.qg_sec.sentences, langs.qg_sec.questions]
        return cls(langs, dev, learn_bpe(corpora, num_merges), seed)

    def data(self, n_pairs: int | None = None) -> TrainingData:
        """Training data with the first ``n_pairs`` primary QG pairs."""
        qg = self.langs.qg_pri.pairs
        if n_pairs is not None:
            if n_pairs > len(qg):
                raise ValueError(f"suite holds {len(qg)} primary pairs, {n_pairs} requested")
            qg = qg[:n_pairs]
        return TrainingData(qg_pri=qg, mono_pri=self.langs.mono_pri.lines,
                            mono_sec=self.langs.mono_sec.lines, qg_sec=self.langs.qg_sec.pairs,
                            parallel=self.langs.parallel.pairs, dev=self.dev.pairs)

    def trainer(self, config: TrainConfig, metrics_path=None) -> Trainer:
        return Trainer.create(self.bpe, replace(config, seed=self.seed), MetricsLog(metrics_path))
