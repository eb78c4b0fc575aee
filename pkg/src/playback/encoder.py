"""Patch tokenizer and transformer encoder.

A spectrogram is tiled into non-overlapping patch_f x patch_t patches in
frequency-major order, flattened, projected to the model width, and summed
with learned frequency/time positional tables. Pre-norm transformer blocks
encode the tokens; mean pooling over the frequency patch axis leaves one
token per temporal patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .audio import ConfigError, MelSpectrogram
from .autodiff import NumericsError, Tensor


@dataclass
class TokenSequence:
    """Projected patch tokens (batch, k, C) with their patch-grid shape."""

    tokens: Tensor
    grid: tuple[int, int]

    @property
    def k(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass
class EncodedFeatures:
    """Per-playback features z: (batch, d, C) with d = temporal patch count."""

    z: Tensor

    @property
    def d(self) -> int:
        return self.z.shape[-2]

    @property
    def channels(self) -> int:
        return self.z.shape[-1]


def extract_patches(values: np.ndarray, patch_f: int, patch_t: int) -> np.ndarray:
    """Tile (B, F, T) into (B, k_f*k_t, patch_f*patch_t), frequency-major."""
    if values.ndim == 2:
        values = values[None]
    b, f, t = values.shape
    if f % patch_f != 0 or t % patch_t != 0:
        raise ConfigError(
            f"spectrogram {f}x{t} not divisible into {patch_f}x{patch_t} patches; "
            f"resize the time axis to a multiple of {patch_t} first")
    k_f, k_t = f // patch_f, t // patch_t
    tiles = values.reshape(b, k_f, patch_f, k_t, patch_t)
    return tiles.transpose(0, 1, 3, 2, 4).reshape(b, k_f * k_t, patch_f * patch_t)


class EncoderBlock(nn.Module):
    def __init__(self, rng, dim: int, heads: int, mlp_ratio: int,
                 residual_scale: float = 1.0):
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.Attention(rng, dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Mlp(rng, dim, dim * mlp_ratio)
        # keep the residual stream near unit scale at init
        self.attn.wo.w.value *= residual_scale
        self.mlp.fc2.w.value *= residual_scale

    def __call__(self, x: Tensor, record: list | None = None) -> Tensor:
        x = ad.add(x, self.attn(self.norm1(x), record=record))
        return ad.add(x, self.mlp(self.norm2(x)))


class SpectrogramEncoder(nn.Module):
    """patchify -> positional encodings -> L pre-norm blocks -> frequency pooling."""

    def __init__(self, rng, cfg):
        self._cfg = cfg
        k_f, k_t = cfg.grid
        self.proj = nn.Linear(rng, cfg.patch_dim, cfg.channels)
        self.pos_freq = nn._init_table(rng, (k_f, cfg.channels))
        self.pos_time = nn._init_table(rng, (k_t, cfg.channels))
        scale = 1.0 / math.sqrt(2.0 * max(cfg.depth, 1))
        self.blocks = [EncoderBlock(rng, cfg.channels, cfg.heads, cfg.mlp_ratio,
                                    residual_scale=scale)
                       for _ in range(cfg.depth)]

    def patchify(self, values: np.ndarray) -> TokenSequence:
        cfg = self._cfg
        if values.ndim == 2:
            values = values[None]
        grid = (values.shape[1] // cfg.patch_f, values.shape[2] // cfg.patch_t)
        patches = extract_patches(values, cfg.patch_f, cfg.patch_t)
        return TokenSequence(self.proj(Tensor(patches)), grid)

    def add_positional(self, tokens: TokenSequence) -> TokenSequence:
        k_f, k_t = tokens.grid
        if self.pos_freq.shape[0] != k_f or self.pos_time.shape[0] != k_t:
            raise ConfigError(
                f"positional tables ({self.pos_freq.shape[0]}, {self.pos_time.shape[0]}) "
                f"do not match patch grid {tokens.grid}")
        # token (f, t) sits at flat index f*k_t + t
        freq = ad.reshape(self.pos_freq, (k_f, 1, self.pos_freq.shape[1]))
        time = ad.reshape(self.pos_time, (1, k_t, self.pos_time.shape[1]))
        table = ad.reshape(ad.add(freq, time), (k_f * k_t, self.pos_freq.shape[1]))
        return TokenSequence(ad.add(tokens.tokens, table), tokens.grid)

    def encode(self, tokens: TokenSequence, record: list | None = None) -> EncodedFeatures:
        x = tokens.tokens
        for i, block in enumerate(self.blocks):
            x = block(x, record=record)
            if not np.isfinite(x.value).all():
                raise NumericsError(f"non-finite activations after encoder block {i}")
        k_f, k_t = tokens.grid
        b = x.shape[0]
        grid = ad.reshape(x, (b, k_f, k_t, x.shape[-1]))
        return EncodedFeatures(ad.mean(grid, axis=1))

    def __call__(self, values: np.ndarray, record: list | None = None) -> EncodedFeatures:
        return self.encode(self.add_positional(self.patchify(values)), record=record)

    def encode_spectrogram(self, spec: MelSpectrogram) -> EncodedFeatures:
        return self(spec.values[None])
