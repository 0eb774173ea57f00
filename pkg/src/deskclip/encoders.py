"""Tiny image and text encoders sharing one joint embedding space.

Both encoders expose pooled embeddings for global contrastive losses and
per-token embeddings for the token-wise (late interaction) losses. All
embeddings are projected to a common dimension; callers normalize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .nn import INIT_STD, LayerNorm, Linear, Module, ModuleList, TransformerBlock, trunc_normal
from .tensor import Tensor

TEMPERATURE_INIT = 0.07
TEMPERATURE_MIN = 0.005
TEMPERATURE_MAX = 100.0
ATTN_MASK_PENALTY = -1e9


@dataclass(frozen=True)
class VitConfig:
    image_size: int = 32
    patch_size: int = 4
    width: int = 96
    depth: int = 4
    heads: int = 4
    embed_dim: int = 64
    channels: int = 3

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        for name in ("image_size", "patch_size", "width", "depth", "heads", "embed_dim", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid


@dataclass(frozen=True)
class ConvConfig:
    image_size: int = 32
    channels: int = 3
    stage_channels: tuple[int, ...] = (32, 64, 96)
    kernel_size: int = 3
    embed_dim: int = 64

    def __post_init__(self):
        if not self.stage_channels:
            raise ConfigError("stage_channels must be non-empty")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd")
        side = self.image_size
        for _ in self.stage_channels:
            if side % 2 != 0:
                raise ConfigError(f"image_size {self.image_size} not halvable {len(self.stage_channels)} times")
            side //= 2
        if side < 2:
            raise ConfigError("final feature grid smaller than 2x2; drop a stage or grow the input")

    @property
    def final_grid(self) -> int:
        return self.image_size // (2 ** len(self.stage_channels))


@dataclass(frozen=True)
class TextConfig:
    vocab_size: int = 512
    context_length: int = 32
    width: int = 96
    depth: int = 4
    heads: int = 4
    embed_dim: int = 64
    pad_id: int = 0
    end_id: int = 2

    MAX_CONTEXT = 76

    def __post_init__(self):
        if self.context_length > self.MAX_CONTEXT:
            raise ConfigError(f"context_length {self.context_length} exceeds ceiling {self.MAX_CONTEXT}")
        if self.context_length < 4:
            raise ConfigError("context_length must be at least 4")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.vocab_size < 8:
            raise ConfigError("vocab_size too small for the reserved ids")
        if self.pad_id == self.end_id:
            raise ConfigError("pad_id and end_id must differ")


@dataclass
class EmbeddingSet:
    """Pooled plus per-token embeddings for one batch.

    ``tokens`` has a fixed token axis; ``mask[n, t]`` marks which slots are
    real. ``overlapping_receptive_fields`` is True when neighbouring tokens
    saw overlapping input regions (convolutional trunks), which matters for
    interpreting token-wise similarity maps.
    """

    pooled: Tensor               # (N, D)
    tokens: Tensor               # (N, T, D)
    mask: np.ndarray             # (N, T) bool
    overlapping_receptive_fields: bool = False
    token_counts: np.ndarray = field(default=None)  # (N,) int

    def __post_init__(self):
        if self.token_counts is None:
            self.token_counts = self.mask.sum(axis=1).astype(np.int64)


class VitEncoder(Module):
    """Patch transformer over square images, class-token pooled.

    Per-token output covers the patch positions only; the class token is
    pooled separately and never appears in the token set.
    """

    def __init__(self, cfg: VitConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        patch_dim = cfg.channels * cfg.patch_size * cfg.patch_size
        self.patch_proj = Linear(patch_dim, cfg.width, rng)
        self.class_token = Tensor(trunc_normal(rng, (1, 1, cfg.width)), requires_grad=True)
        self.pos_embedding = Tensor(
            trunc_normal(rng, (1, cfg.num_patches + 1, cfg.width)), requires_grad=True
        )
        self.blocks = ModuleList(TransformerBlock(cfg.width, cfg.heads, rng) for _ in range(cfg.depth))
        self.ln_final = LayerNorm(cfg.width)
        self.proj = Linear(cfg.width, cfg.embed_dim, rng, bias=False)

    def _patchify(self, images: Tensor) -> Tensor:
        cfg = self.cfg
        n = images.shape[0]
        g, p = cfg.grid, cfg.patch_size
        x = T.reshape(images, (n, cfg.channels, g, p, g, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        return T.reshape(x, (n, g * g, cfg.channels * p * p))

    def __call__(self, images: Tensor) -> EmbeddingSet:
        cfg = self.cfg
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ShapeError(f"VitEncoder expects (N, {expected[0]}, {expected[1]}, {expected[2]}), got {images.shape}")
        n = images.shape[0]
        x = self.patch_proj(self._patchify(images))
        cls = T.broadcast_to(self.class_token, (n, 1, cfg.width))
        x = T.concat([cls, x], axis=1) + self.pos_embedding
        for block in self.blocks:
            x = block(x)
        x = self.ln_final(x)
        pooled = T.l2_normalize(self.proj(x[:, 0]))
        tokens = T.l2_normalize(self.proj(x[:, 1:]))
        mask = np.ones((n, cfg.num_patches), dtype=bool)
        return EmbeddingSet(pooled, tokens, mask, overlapping_receptive_fields=False)


class ConvEncoder(Module):
    """Small conv trunk; each stage is conv + gelu + 2x2 average pool.

    Tokens are the final grid cells, pooled is the global average. The
    receptive fields of neighbouring cells overlap, and the set flags that.
    """

    def __init__(self, cfg: ConvConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.filters = []
        in_ch = cfg.channels
        k = cfg.kernel_size
        for i, out_ch in enumerate(cfg.stage_channels):
            w = Tensor(trunc_normal(rng, (out_ch, in_ch, k, k), std=INIT_STD * 4), requires_grad=True)
            setattr(self, f"stage{i}_filter", w)
            self.filters.append(w)
            in_ch = out_ch
        self.proj = Linear(in_ch, cfg.embed_dim, rng, bias=False)

    @staticmethod
    def _avgpool2(x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        x = T.reshape(x, (n, c, h // 2, 2, w // 2, 2))
        return T.mean(x, axis=(3, 5))

    def __call__(self, images: Tensor) -> EmbeddingSet:
        cfg = self.cfg
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ShapeError(f"ConvEncoder expects (N, {expected[0]}, {expected[1]}, {expected[2]}), got {images.shape}")
        x = images
        pad = cfg.kernel_size // 2
        for w in self.filters:
            x = self._avgpool2(T.gelu(T.conv2d(x, w, padding=pad)))
        n, c, gh, gw = x.shape
        cells = T.transpose(T.reshape(x, (n, c, gh * gw)), (0, 2, 1))  # (n, cells, c)
        tokens = T.l2_normalize(self.proj(cells))
        pooled = T.l2_normalize(self.proj(T.mean(cells, axis=1)))
        mask = np.ones((n, gh * gw), dtype=bool)
        return EmbeddingSet(pooled, tokens, mask, overlapping_receptive_fields=True)


class TextEncoder(Module):
    """Bidirectional token transformer pooled at the end-of-text position.

    Attention is bidirectional (not causal) so the same trunk can score
    masked-token reconstruction; padding positions are masked out of every
    attention row. Per-token output covers non-padding positions.
    """

    def __init__(self, cfg: TextConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = Tensor(trunc_normal(rng, (cfg.vocab_size, cfg.width)), requires_grad=True)
        self.pos_embedding = Tensor(trunc_normal(rng, (1, cfg.context_length, cfg.width)), requires_grad=True)
        self.blocks = ModuleList(TransformerBlock(cfg.width, cfg.heads, rng) for _ in range(cfg.depth))
        self.ln_final = LayerNorm(cfg.width)
        self.proj = Linear(cfg.width, cfg.embed_dim, rng, bias=False)
        self.mlm_head = Linear(cfg.width, cfg.vocab_size, rng)

    def _validate_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] != self.cfg.context_length:
            raise ShapeError(
                f"TextEncoder expects (N, {self.cfg.context_length}) token ids, got {ids.shape}"
            )
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise ContractError(f"token id outside [0, {self.cfg.vocab_size})")
        return ids

    def forward_hidden(self, ids: np.ndarray) -> Tensor:
        """Final-layernorm hidden states (N, L, width), before projection."""
        ids = self._validate_ids(ids)
        n, L = ids.shape
        pad = ids == self.cfg.pad_id
        # rows may attend anywhere except padding columns
        bias = np.where(pad[:, None, None, :], ATTN_MASK_PENALTY, 0.0)
        x = T.embedding_lookup(self.token_embedding, ids) + self.pos_embedding
        for block in self.blocks:
            x = block(x, bias)
        return self.ln_final(x)

    def __call__(self, ids: np.ndarray) -> EmbeddingSet:
        ids = self._validate_ids(ids)
        hidden = self.forward_hidden(ids)
        n, L = ids.shape
        eot = np.argmax(ids == self.cfg.end_id, axis=1)
        if not (ids[np.arange(n), eot] == self.cfg.end_id).all():
            raise ContractError("a sequence has no end-of-text token")
        pooled = T.l2_normalize(self.proj(T.select_positions(hidden, eot)))
        mask = ids != self.cfg.pad_id
        # padding slots get a constant stand-in so normalization cannot hit a
        # zero norm there; the mask excludes them from every consumer
        keep = T.constant(mask[:, :, None].astype(np.float64))
        tokens = T.l2_normalize(self.proj(hidden) * keep + (T.constant(1.0) - keep))
        return EmbeddingSet(pooled, tokens, mask, overlapping_receptive_fields=False)

    def mlm_logits(self, hidden: Tensor, positions: np.ndarray) -> Tensor:
        """Vocabulary logits at (row, col) positions: (P, vocab_size)."""
        pos = np.asarray(positions, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ShapeError(f"positions must be (P, 2), got {pos.shape}")
        n, L, w = hidden.shape
        flat = T.reshape(hidden, (n * L, w))
        picked = T.embedding_lookup(flat, pos[:, 0] * L + pos[:, 1])
        return self.mlm_head(picked)


class DualEncoder(Module):
    """Image encoder + text encoder + one learnable softmax temperature.

    The temperature is stored as its logarithm so gradient steps scale
    multiplicatively; ``clamp_temperature`` enforces the allowed range
    after each optimizer step.
    """

    def __init__(self, image_encoder: Module, text_encoder: TextEncoder):
        super().__init__()
        self.image = image_encoder
        self.text = text_encoder
        self.log_temperature = Tensor(np.array(math.log(TEMPERATURE_INIT)), requires_grad=True)

    def temperature(self) -> Tensor:
        return T.exp(self.log_temperature)

    def clamp_temperature(self) -> None:
        lo, hi = math.log(TEMPERATURE_MIN), math.log(TEMPERATURE_MAX)
        # clip in place: np.clip on a 0-d array would hand back a scalar
        np.clip(self.log_temperature.data, lo, hi, out=self.log_temperature.data)

    def encode_image(self, images: Tensor) -> EmbeddingSet:
        return self.image(images)

    def encode_text(self, ids: np.ndarray) -> EmbeddingSet:
        return self.text(ids)
