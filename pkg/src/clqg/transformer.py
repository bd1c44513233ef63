"""Transformer pieces: sinusoidal positions, directional masks, attention, layers.

Encoder self-attention is directional: the first half of the heads only look
to the right of each query (forward mask), the second half only to the left
(backward mask). Under the default strict masks a token never attends to
itself; it reaches the next layer through the residual path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -np.inf
MASK_KINDS = ("forward", "backward", "causal", "none")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 300
    n_heads: int = 6
    private_layers: int = 2
    shared_layers: int = 2
    ffn_dim: int | None = None
    dropout: float = 0.2
    max_positions: int = 256
    mask_diagonal: str = "strict"
    pos_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal positions")
        if self.mask_diagonal not in ("strict", "permit_self"):
            raise ValueError(f"mask_diagonal must be 'strict' or 'permit_self', got {self.mask_diagonal!r}")
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.d_model)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(max_pos: int, d_model: int, m: float = 10000.0) -> np.ndarray:
    """Table of shape (max_pos, d_model): sin on even columns, cos on odd ones."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(max_pos, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(m, two_i / d_model)
    pe = np.empty((max_pos, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


@dataclass(frozen=True)
class Mask:
    n: int
    kind: str
    matrix: np.ndarray = field(repr=False, compare=False)


def directional_mask(n: int, kind: str, diagonal: str = "strict") -> Mask:
    """Additive n×n mask with entries in {0, -inf}.

    forward: 0 where i < j; backward: 0 where i > j; causal: 0 where i >= j.
    ``diagonal="permit_self"`` relaxes forward/backward to include i == j.
    """
    if n < 1:
        raise ValueError("mask length must be positive")
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    self_ok = diagonal == "permit_self"
    if kind == "forward":
        allowed = (i < j) | (self_ok & (i == j))
    elif kind == "backward":
        allowed = (i > j) | (self_ok & (i == j))
    elif kind == "causal":
        allowed = i >= j
    else:
        allowed = np.ones((n, n), dtype=bool)
    return Mask(n=n, kind=kind, matrix=np.where(allowed, 0.0, NEG_INF))


def encoder_head_masks(n: int, n_heads: int, diagonal: str = "strict") -> np.ndarray:
    """(n_heads, n, n) stack: forward masks on the first half, backward on the rest."""
    fwd = directional_mask(n, "forward", diagonal).matrix
    bwd = directional_mask(n, "backward", diagonal).matrix
    split = n_heads // 2 if n_heads > 1 else 1
    return np.stack([fwd if h < split else bwd for h in range(n_heads)])


def padding_mask(ids: np.ndarray, pad_id: int) -> np.ndarray:
    """(B, 1, 1, n) additive mask hiding pad keys."""
    return np.where(ids == pad_id, NEG_INF, 0.0)[:, None, None, :]


# parameters ---------------------------------------------------------------

def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class AttentionWeights:
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        self.n_heads = n_heads
        self.q = T.parameter(_xavier(rng, d_model, d_model))
        self.k = T.parameter(_xavier(rng, d_model, d_model))
        self.v = T.parameter(_xavier(rng, d_model, d_model))
        self.o = T.parameter(_xavier(rng, d_model, d_model))
        self.q_bias = T.parameter(np.zeros(d_model))
        self.k_bias = T.parameter(np.zeros(d_model))
        self.v_bias = T.parameter(np.zeros(d_model))
        self.o_bias = T.parameter(np.zeros(d_model))

    def named_parameters(self, prefix: str):
        for name in ("q", "k", "v", "o", "q_bias", "k_bias", "v_bias", "o_bias"):
            yield f"{prefix}.{name}", getattr(self, name)


class LayerNorm:
    def __init__(self, d_model: int):
        self.gain = T.parameter(np.ones(d_model))
        self.bias = T.parameter(np.zeros(d_model))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


class FeedForward:
    def __init__(self, d_model: int, ffn_dim: int, rng: np.random.Generator):
        self.w1 = T.parameter(_xavier(rng, d_model, ffn_dim))
        self.b1 = T.parameter(np.zeros(ffn_dim))
        self.w2 = T.parameter(_xavier(rng, ffn_dim, d_model))
        self.b2 = T.parameter(np.zeros(d_model))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(T.relu(T.linear(x, self.w1, self.b1)), self.w2, self.b2)

    def named_parameters(self, prefix: str):
        for name in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{name}", getattr(self, name)


def multi_head_attention(queries: Tensor, keys: Tensor, values: Tensor, mask,
                         weights: AttentionWeights, key_padding: np.ndarray | None = None,
                         return_weights: bool = False):
    """Scaled dot-product attention over ``weights.n_heads`` heads.

    ``queries`` is (B, n_q, d) and ``keys``/``values`` are (B, n_k, d). ``mask``
    is a :class:`Mask`, an (n_q, n_k) array shared by all heads, an
    (n_heads, n_q, n_k) per-head array, or None.
    """
    queries, keys, values = T.as_tensor(queries), T.as_tensor(keys), T.as_tensor(values)
    batch, n_q, d = queries.shape
    n_k = keys.shape[1]
    h = weights.n_heads
    dh = d // h
    if values.shape[1] != n_k:
        raise T.DimensionError(f"keys {keys.shape} and values {values.shape} disagree")

    additive = None
    if mask is not None:
        m = mask.matrix if isinstance(mask, Mask) else np.asarray(mask)
        if m.shape[-2:] != (n_q, n_k):
            raise T.DimensionError(f"mask of shape {m.shape} does not fit {n_q} queries x {n_k} keys")
        additive = m if m.ndim == 3 else m[None]
    if key_padding is not None:
        additive = key_padding if additive is None else additive[None] + key_padding
    elif additive is not None:
        additive = additive[None]

    def split(x: Tensor, w: Tensor, b: Tensor, n: int) -> Tensor:
        return T.transpose(T.reshape(T.linear(x, w, b), (batch, n, h, dh)), (0, 2, 1, 3))

    q = split(queries, weights.q, weights.q_bias, n_q)
    k = split(keys, weights.k, weights.k_bias, n_k)
    v = split(values, weights.v, weights.v_bias, n_k)
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    if additive is not None:
        scores = scores + additive.astype(scores.data.dtype)
    attn = T.softmax(scores, axis=-1)
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (batch, n_q, d))
    out = T.linear(ctx, weights.o, weights.o_bias)
    return (out, attn.data) if return_weights else out


class EncoderLayer:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.d_model)
        self.self_attn = AttentionWeights(cfg.d_model, cfg.n_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, rng)

    def __call__(self, x: Tensor, head_masks: np.ndarray, key_padding: np.ndarray | None,
                 dropout: float = 0.0, rng=None, training: bool = False) -> Tensor:
        h = self.norm1(x)
        x = x + T.dropout(multi_head_attention(h, h, h, head_masks, self.self_attn, key_padding),
                          dropout, rng, training)
        return x + T.dropout(self.ffn(self.norm2(x)), dropout, rng, training)

    def named_parameters(self, prefix: str):
        yield from self.norm1.named_parameters(f"{prefix}.norm1")
        yield from self.self_attn.named_parameters(f"{prefix}.self_attn")
        yield from self.norm2.named_parameters(f"{prefix}.norm2")
        yield from self.ffn.named_parameters(f"{prefix}.ffn")


class DecoderLayer:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.d_model)
        self.self_attn = AttentionWeights(cfg.d_model, cfg.n_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.cross_attn = AttentionWeights(cfg.d_model, cfg.n_heads, rng)
        self.norm3 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, rng)

    def __call__(self, x: Tensor, memory: Tensor, causal: np.ndarray,
                 memory_padding: np.ndarray | None, dropout: float = 0.0, rng=None,
                 training: bool = False) -> Tensor:
        h = self.norm1(x)
        x = x + T.dropout(multi_head_attention(h, h, h, causal, self.self_attn), dropout, rng, training)
        h = self.norm2(x)
        x = x + T.dropout(multi_head_attention(h, memory, memory, None, self.cross_attn, memory_padding),
                          dropout, rng, training)
        return x + T.dropout(self.ffn(self.norm3(x)), dropout, rng, training)

    def named_parameters(self, prefix: str):
        yield from self.norm1.named_parameters(f"{prefix}.norm1")
        yield from self.self_attn.named_parameters(f"{prefix}.self_attn")
        yield from self.norm2.named_parameters(f"{prefix}.norm2")
        yield from self.cross_attn.named_parameters(f"{prefix}.cross_attn")
        yield from self.norm3.named_parameters(f"{prefix}.norm3")
        yield from self.ffn.named_parameters(f"{prefix}.ffn")


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        return ids[None, :], True
    return ids, False


def embed(model, ids: np.ndarray) -> Tensor:
    cfg = model.config
    n = ids.shape[1]
    if n > cfg.max_positions:
        raise ValueError(f"sequence of length {n} exceeds max_positions={cfg.max_positions}")
    x = T.embedding(model.embed, ids) * float(np.sqrt(cfg.d_model))
    x = x + model.positions[:n].astype(x.data.dtype)
    return T.dropout(x, cfg.dropout, model.rng, model.training)


def encoder_stack_forward(model, ids, lang: str) -> Tensor:
    """Embed ``ids`` and run the private layers of ``lang`` then the shared ones.

    ``ids`` is (n,) or a padded (B, n) batch; the output is (n, d) or (B, n, d).
    """
    ids, single = _as_batch(ids)
    if ids.shape[1] == 0:
        raise ValueError("cannot encode an empty sequence")
    layers = model.encoder_layers(lang)
    cfg = model.config
    masks = encoder_head_masks(ids.shape[1], cfg.n_heads, cfg.mask_diagonal)
    pad = padding_mask(ids, model.pad_id)
    x = embed(model, ids)
    for layer in layers:
        x = layer(x, masks, pad, cfg.dropout, model.rng, model.training)
    x = model.enc_norm(x)
    return T.reshape(x, x.shape[1:]) if single else x


def decoder_stack_forward(model, memory: Tensor, prefix, lang: str,
                          src_ids=None) -> Tensor:
    """Logits of shape (t, V) or (B, t, V) for a BOS-started ``prefix``.

    Shared decoder layers run first, then the private layers of ``lang``.
    ``src_ids`` (same batch layout as the encoder input) masks source padding.
    """
    prefix, single = _as_batch(prefix)
    if single and memory.ndim == 2:
        memory = T.reshape(memory, (1,) + memory.shape)
    cfg = model.config
    t = prefix.shape[1]
    if t == 0:
        raise ValueError("decoder prefix must start with BOS")
    if t > cfg.max_positions:
        raise ValueError(f"prefix of length {t} exceeds max_positions={cfg.max_positions}")
    layers = model.decoder_layers(lang)
    causal = directional_mask(t, "causal").matrix
    mem_pad = None
    if src_ids is not None:
        src, _ = _as_batch(src_ids)
        mem_pad = padding_mask(src, model.pad_id)
    x = embed(model, prefix)
    for layer in layers:
        x = layer(x, memory, causal, mem_pad, cfg.dropout, model.rng, model.training)
    x = model.dec_norm[lang](x)
    logits = T.linear(x, model.out_w, model.out_b)
    return T.reshape(logits, logits.shape[1:]) if single else logits
