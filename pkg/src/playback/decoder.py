"""Recurrent transformer decoder and the full multi-playback pipeline.

A bank of latent tokens initialized from a learned parameter cross-attends to
each playback's encoder features (tagged with patch and playback embeddings),
runs one self-attention block with a residual MLP, and feeds a classifier head
shared across playbacks. Between passes the slot selector picks the raw-audio
spans that become the next, finer-hop playback input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .audio import (AudioClip, ConfigError, MelSpectrogram, SegmentSet,
                    extract_segments, make_playback_input)
from .autodiff import Tensor
from .config import ModelConfig
from .encoder import EncodedFeatures, SpectrogramEncoder
from .slots import SaliencyCurve, SlotAttention, saliency_diagonal, select_segments


def standardize(values: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance scaling of each spectrogram in a (B, F, T) stack.

    Log-mel energies span roughly [-14, +10]; without this the first SGD
    update blows up. A constant spectrogram maps to all zeros.
    """
    mean = values.mean(axis=(-2, -1), keepdims=True)
    std = values.std(axis=(-2, -1), keepdims=True)
    return (values - mean) / (std + 1e-6)


@dataclass
class DecoderLatent:
    """Latent tokens carried across playbacks: (batch, L_q, C)."""

    v: Tensor
    pass_index: int


@dataclass
class PlaybackTrace:
    """Bookkeeping for one completed pass of one clip."""

    pass_index: int
    hop_ms: float
    spec: MelSpectrogram
    z: np.ndarray
    v: np.ndarray
    logits: np.ndarray
    saliency: SaliencyCurve | None = None
    segments: SegmentSet | None = None


@dataclass
class BatchForward:
    """Batched graph outputs of a full multi-pass forward."""

    logits_per_pass: list[Tensor]
    traces: list[list[PlaybackTrace]] = field(default_factory=list)


class PlaybackDecoder(nn.Module):
    """One cross-attention block over encoder features, then one self-attention
    block with a residual MLP, per playback."""

    def __init__(self, rng, cfg: ModelConfig):
        c = cfg.channels
        self.patch_pos = nn._init_table(rng, (cfg.grid[1], c))
        self.pass_embed = nn._init_table(rng, (cfg.n_passes, c))
        self.norm_q = nn.LayerNorm(c)
        self.norm_kv = nn.LayerNorm(c)
        self.cross = nn.Attention(rng, c, cfg.heads)
        self.norm_self = nn.LayerNorm(c)
        self.self_attn = nn.Attention(rng, c, cfg.heads)
        self.norm_mlp = nn.LayerNorm(c)
        self.mlp = nn.Mlp(rng, c, c * cfg.mlp_ratio)
        # the block reapplies to the latent every pass; keep its residual small
        scale = 1.0 / math.sqrt(2.0 * cfg.n_passes)
        for proj in (self.cross.wo, self.self_attn.wo, self.mlp.fc2):
            proj.w.value *= scale

    def __call__(self, z: EncodedFeatures, v_prev: DecoderLatent,
                 record: list | None = None) -> DecoderLatent:
        pass_index = v_prev.pass_index + 1
        if pass_index > self.pass_embed.shape[0]:
            raise ConfigError(
                f"playback embedding table has {self.pass_embed.shape[0]} entries, "
                f"pass {pass_index} requested")
        if z.d != self.patch_pos.shape[0]:
            raise ConfigError(
                f"decoder patch table sized {self.patch_pos.shape[0]}, got {z.d} tokens")
        z_aug = ad.add(ad.add(z.z, self.patch_pos), self.pass_embed[pass_index - 1])
        v = v_prev.v
        v = ad.add(v, self.cross(self.norm_q(v), self.norm_kv(z_aug), record=record))
        v = ad.add(v, self.self_attn(self.norm_self(v), record=record))
        v = ad.add(v, self.mlp(self.norm_mlp(v)))
        return DecoderLatent(v, pass_index)


class PlaybackModel(nn.Module):
    """Encoder, slot selector, recurrent decoder and shared classifier head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = SpectrogramEncoder(rng, cfg)
        self.slot_attn = SlotAttention(rng, cfg.channels, cfg.d_slot, cfg.slot_hidden)
        self.latent_init = nn._init_table(rng, (cfg.latent_tokens, cfg.channels))
        self.decoder = PlaybackDecoder(rng, cfg)
        self.head = nn.Linear(rng, cfg.channels, cfg.n_classes, bias=False)

    def classify(self, latent: DecoderLatent) -> Tensor:
        pooled = ad.mean(latent.v, axis=-2)
        return self.head(pooled)

    def initial_latent(self, batch: int) -> DecoderLatent:
        lq, c = self.latent_init.shape
        tiled = ad.mul(ad.reshape(self.latent_init, (1, lq, c)),
                       Tensor(np.ones((batch, 1, 1))))
        return DecoderLatent(tiled, 0)

    def forward_batch(self, clips: list[AudioClip], train: bool = False,
                      rng: np.random.Generator | None = None,
                      keep_traces: bool = False,
                      record: list | None = None) -> BatchForward:
        """Run all passes over a batch of equal-length clips.

        Pass 1 analyzes each full clip at the base hop; every later pass
        analyzes the spans selected by the previous pass at a hop reduced by
        the configured decrement, resized to the fixed model frame count.
        """
        cfg = self.cfg
        batch = len(clips)
        t_model = cfg.input_frames
        current = [(clip, SegmentSet.full(clip)) for clip in clips]
        latent = self.initial_latent(batch)
        logits_per_pass: list[Tensor] = []
        traces: list[list[PlaybackTrace]] = [[] for _ in range(batch)]

        for p in range(1, cfg.n_passes + 1):
            specs = [make_playback_input(clip, segs, p, cfg, target_frames=t_model)
                     for clip, segs in current]
            stacked = np.stack([s.values for s in specs])
            z = self.encoder(standardize(stacked), record=record)
            latent = self.decoder(z, latent, record=record)
            logits = self.classify(latent)
            logits_per_pass.append(logits)

            curves: list[SaliencyCurve] | None = None
            selections: list[SegmentSet] = []
            if p < cfg.n_passes:
                # the thresholded selection passes no gradient, so the slot
                # branch runs on detached features; values are unchanged
                state = self.slot_attn.run(z.z.detach(), cfg.slot_iters,
                                           train=train, rng=rng)
                curves = saliency_diagonal(state)
                next_current = []
                for i, (clip, _) in enumerate(current):
                    sub = extract_segments(clip, current[i][1]) if p > 1 else clip
                    ms_per_frame = sub.duration_s * 1000.0 / t_model
                    segs = select_segments(curves[i], t_model, ms_per_frame,
                                           sub.duration_s, cfg.min_select_s,
                                           cfg.merge_gap_frames)
                    selections.append(segs)
                    next_current.append((sub, segs))
                current = next_current

            if keep_traces:
                for i in range(batch):
                    traces[i].append(PlaybackTrace(
                        pass_index=p, hop_ms=specs[i].hop_ms, spec=specs[i],
                        z=z.z.value[i].copy(), v=latent.v.value[i].copy(),
                        logits=logits.value[i].copy(),
                        saliency=curves[i] if curves is not None else None,
                        segments=selections[i] if selections else None))

        return BatchForward(logits_per_pass, traces)

    def forward_all_passes(self, clip: AudioClip, train: bool = False,
                           rng: np.random.Generator | None = None) -> list[PlaybackTrace]:
        """Single-clip convenience wrapper returning per-pass traces."""
        out = self.forward_batch([clip], train=train, rng=rng, keep_traces=True)
        return out.traces[0]

    def probabilities(self, logits: Tensor) -> Tensor:
        if self.cfg.label_mode == "single":
            return ad.softmax(logits, axis=-1)
        return ad.sigmoid(logits)

    def infer_batch(self, clips: list[AudioClip]) -> np.ndarray:
        """Mean of the per-pass class probabilities, eval mode."""
        out = self.forward_batch(clips, train=False)
        probs = [self.probabilities(lg).value for lg in out.logits_per_pass]
        return np.mean(probs, axis=0)

    def infer(self, clip: AudioClip) -> np.ndarray:
        return self.infer_batch([clip])[0]
