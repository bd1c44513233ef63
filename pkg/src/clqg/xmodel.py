"""Two-language encoder/decoder with private and shared layer groups.

Storage groups and the names they are published under::

    enc.pri     W_E_pri        dec.shared  W_D_shared
    enc.sec     W_E_sec        dec.pri     W_D_pri
    enc.shared  W_E_shared     dec.sec     W_D_sec
    embed       token embeddings + output projection (shared, always trained)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .transformer import (DecoderLayer, EncoderLayer, LayerNorm, ModelConfig,
                          decoder_stack_forward, encoder_stack_forward, positional_encoding)

LANGS = ("pri", "sec")
TASKS = ("AE", "BT", "MT", "QG")
GROUP_STORAGE = {
    "W_E_pri": "enc.pri",
    "W_E_sec": "enc.sec",
    "W_E_shared": "enc.shared",
    "W_D_shared": "dec.shared",
    "W_D_pri": "dec.pri",
    "W_D_sec": "dec.sec",
}
EMBED_GROUP = "embed"
CHECKPOINT_VERSION = 1


class RoutingError(ValueError):
    pass


@dataclass(frozen=True)
class TaskRoute:
    task: str
    lang_in: str
    lang_out: str
    trainable_groups: frozenset[str]

    @property
    def storage_groups(self) -> tuple[str, ...]:
        """Storage names the optimizer steps for this pass, embeddings included."""
        return tuple(sorted(GROUP_STORAGE[g] for g in self.trainable_groups)) + (EMBED_GROUP,)


def route(task: str, lang_in: str, lang_out: str) -> TaskRoute:
    if task not in TASKS:
        raise RoutingError(f"unknown task {task!r}")
    if lang_in not in LANGS or lang_out not in LANGS:
        raise RoutingError(f"unknown language pair {lang_in!r} -> {lang_out!r}")
    same = lang_in == lang_out
    if task in ("AE", "QG") and not same:
        raise RoutingError(f"{task} maps a language onto itself, got {lang_in} -> {lang_out}")
    if task in ("BT", "MT") and same:
        raise RoutingError(f"{task} needs two different languages, got {lang_in} -> {lang_out}")
    groups = frozenset({f"W_E_{lang_in}", "W_E_shared", "W_D_shared", f"W_D_{lang_out}"})
    return TaskRoute(task, lang_in, lang_out, groups)


class CrossLingualTransformer:
    """The parameter partition plus the forward pass that routes through it."""

    def __init__(self, config: ModelConfig, seed: int = 0, pad_id: int = 0):
        self.config = config
        self.pad_id = pad_id
        self.training = False
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        init = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        cfg = config
        d = cfg.d_model
        self.embed = T.parameter(init.normal(0.0, d**-0.5, size=(cfg.vocab_size, d)))
        self.out_w = T.parameter(init.normal(0.0, d**-0.5, size=(d, cfg.vocab_size)))
        self.out_b = T.parameter(np.zeros(cfg.vocab_size))
        self.enc_private = {lang: [EncoderLayer(cfg, init) for _ in range(cfg.private_layers)]
                            for lang in LANGS}
        self.enc_shared = [EncoderLayer(cfg, init) for _ in range(cfg.shared_layers)]
        self.enc_norm = LayerNorm(d)
        self.dec_shared = [DecoderLayer(cfg, init) for _ in range(cfg.shared_layers)]
        self.dec_private = {lang: [DecoderLayer(cfg, init) for _ in range(cfg.private_layers)]
                            for lang in LANGS}
        self.dec_norm = {lang: LayerNorm(d) for lang in LANGS}
        self.positions = positional_encoding(cfg.max_positions, d, cfg.pos_base)
        self.groups = self._build_groups()

    def _build_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        groups: dict[str, list[tuple[str, Tensor]]] = {
            EMBED_GROUP: [("embed.tokens", self.embed), ("embed.out_w", self.out_w),
                          ("embed.out_b", self.out_b)],
        }
        for lang in LANGS:
            groups[f"enc.{lang}"] = [
                item for i, layer in enumerate(self.enc_private[lang])
                for item in layer.named_parameters(f"enc.{lang}.layer{i}")
            ]
        groups["enc.shared"] = [
            item for i, layer in enumerate(self.enc_shared)
            for item in layer.named_parameters(f"enc.shared.layer{i}")
        ] + list(self.enc_norm.named_parameters("enc.shared.final_norm"))
        groups["dec.shared"] = [
            item for i, layer in enumerate(self.dec_shared)
            for item in layer.named_parameters(f"dec.shared.layer{i}")
        ]
        for lang in LANGS:
            groups[f"dec.{lang}"] = [
                item for i, layer in enumerate(self.dec_private[lang])
                for item in layer.named_parameters(f"dec.{lang}.layer{i}")
            ] + list(self.dec_norm[lang].named_parameters(f"dec.{lang}.final_norm"))
        for items in groups.values():
            for name, p in items:
                p.name = name
        return groups

    # structure -------------------------------------------------------------

    def encoder_layers(self, lang: str) -> list[EncoderLayer]:
        if lang not in LANGS:
            raise ValueError(f"unknown language tag {lang!r}")
        return self.enc_private[lang] + self.enc_shared

    def decoder_layers(self, lang: str) -> list[DecoderLayer]:
        if lang not in LANGS:
            raise ValueError(f"unknown language tag {lang!r}")
        return self.dec_shared + self.dec_private[lang]

    def named_parameters(self):
        for group in sorted(self.groups):
            yield from self.groups[group]

    def parameters(self, group: str | None = None) -> list[Tensor]:
        if group is None:
            return [p for _, p in self.named_parameters()]
        return [p for _, p in self.groups[group]]

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        return {g: [p for _, p in items] for g, items in self.groups.items()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> CrossLingualTransformer:
        self.training = mode
        return self

    def eval(self) -> CrossLingualTransformer:
        return self.train(False)

    def checksum(self, group: str) -> str:
        h = hashlib.sha256()
        for name, p in self.groups[group]:
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def checksums(self) -> dict[str, str]:
        return {g: self.checksum(g) for g in sorted(self.groups)}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    # forward ---------------------------------------------------------------

    def encode(self, ids, lang: str) -> Tensor:
        return encoder_stack_forward(self, ids, lang)

    def decode(self, memory: Tensor, prefix, lang: str, src_ids=None) -> Tensor:
        return decoder_stack_forward(self, memory, prefix, lang, src_ids)

    def forward(self, src_ids, lang_in: str, lang_out: str, prefix) -> Tensor:
        memory = self.encode(src_ids, lang_in)
        return self.decode(memory, prefix, lang_out, src_ids)

    __call__ = forward


# checkpoints ---------------------------------------------------------------

def save_checkpoint(model: CrossLingualTransformer, path, vocab_hash: str = "") -> None:
    """Write ``manifest.json`` and ``params.bin`` (little-endian float32) into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, offset, chunks = [], 0, []
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "pad_id": model.pad_id,
        "vocab_hash": vocab_hash,
        "parameters": index,
    }
    (path / "params.bin").write_bytes(b"".join(chunks))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path, seed: int = 0) -> tuple[CrossLingualTransformer, dict]:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint manifest in {path}")
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    blob = (path / "params.bin").read_bytes()
    model = CrossLingualTransformer(ModelConfig(**manifest["config"]), seed=seed,
                                    pad_id=manifest["pad_id"])
    state = {}
    for entry in manifest["parameters"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        state[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
    model.load_state_dict(state)
    return model, manifest
