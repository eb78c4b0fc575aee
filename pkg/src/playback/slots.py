"""Two-slot attention over encoder features and temporal segment selection.

One slot is trained toward informative audio, the other toward the residual.
Each iteration attends every token with both slots, renormalizes the two
attention maps against each other per token, folds the weighted values into
the slots through a GRU, and applies a residual MLP. The saliency curve is
the row-softmaxed outer product of the informative slot with the elementwise
inverse of the uninformative slot, read along the main diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .audio import SegmentSet
from .autodiff import NumericsError, Tensor, interp_columns

INVERSE_CLAMP = 1e-4
LOG_SIGMA_FLOOR = -20.0


@dataclass
class SlotState:
    """Informative and uninformative slot vectors, stacked (batch, 2, d)."""

    slots: Tensor

    @property
    def s1(self) -> Tensor:
        return self.slots[:, 0, :]

    @property
    def s2(self) -> Tensor:
        return self.slots[:, 1, :]

    @property
    def d(self) -> int:
        return self.slots.shape[-1]


@dataclass
class SaliencyCurve:
    """Per-position relevance in [0, 1] along the temporal axis."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError(f"curve must be a non-empty vector, got {self.values.shape}")


class SlotAttention(nn.Module):
    """Slot attention specialized to two slots with learned init statistics."""

    def __init__(self, rng, in_dim: int, d_slot: int, hidden: int):
        self.init_mean = nn._init_table(rng, (2, d_slot), scale=1.0 / math.sqrt(d_slot))
        self.init_log_sigma = Tensor(np.full((2, d_slot), -2.0), requires_grad=True)
        self.norm_in = nn.LayerNorm(in_dim)
        self.norm_slots = nn.LayerNorm(d_slot)
        self.norm_h = nn.LayerNorm(d_slot)
        self.to_q = nn.Linear(rng, d_slot, d_slot)
        self.to_k = nn.Linear(rng, in_dim, d_slot)
        self.to_v = nn.Linear(rng, in_dim, d_slot)
        self.gru = nn.GruCell(rng, d_slot)
        self.mlp = nn.Mlp(rng, d_slot, hidden, activation="relu")
        self.d_slot = d_slot

    def init_slots(self, batch: int, train: bool, rng: np.random.Generator | None) -> SlotState:
        """Sampled around the learned statistics in training, exact means in eval."""
        mean = ad.reshape(self.init_mean, (1, 2, self.d_slot))
        if not train:
            tiled = ad.mul(mean, Tensor(np.ones((batch, 1, 1))))
            return SlotState(tiled)
        if rng is None:
            raise ValueError("training-mode slot init needs an rng")
        noise = Tensor(rng.standard_normal((batch, 2, self.d_slot)))
        sigma = ad.exp(ad.clamp_min(ad.reshape(self.init_log_sigma, (1, 2, self.d_slot)),
                                    LOG_SIGMA_FLOOR))
        return SlotState(ad.add(mean, ad.mul(sigma, noise)))

    def iterate(self, z: Tensor, state: SlotState, iteration: int,
                record: list | None = None) -> SlotState:
        """One slot-attention update; projection parameters are shared across iterations."""
        keys = self.to_k(self.norm_in(z))      # (B, T, d)
        values = self.to_v(self.norm_in(z))
        queries = self.to_q(self.norm_slots(state.slots))  # (B, 2, d)

        logits = ad.mul(ad.matmul(keys, ad.transpose(queries, (0, 2, 1))),
                        1.0 / math.sqrt(self.d_slot))      # (B, T, 2)
        attn = ad.softmax(logits, axis=1)                  # per slot, over tokens
        total = ad.tensor_sum(attn, axis=2, keepdims=True)
        weights = ad.div(attn, total)                      # cross-slot, per token
        if not np.isfinite(weights.value).all():
            raise NumericsError(f"non-finite attention in slot iteration {iteration}")
        if record is not None:
            record.append(weights.value)

        updates = ad.matmul(ad.transpose(weights, (0, 2, 1)), values)  # (B, 2, d)
        h = self.gru(updates, state.slots)
        return SlotState(ad.add(state.slots, self.mlp(self.norm_h(h))))

    def run(self, z: Tensor, iterations: int, train: bool = False,
            rng: np.random.Generator | None = None, record: list | None = None) -> SlotState:
        if iterations < 1:
            raise ValueError(f"need at least one slot iteration, got {iterations}")
        state = self.init_slots(z.shape[0], train, rng)
        for j in range(1, iterations + 1):
            state = self.iterate(z, state, j, record=record)
        return state


def saliency_matrix(state: SlotState) -> Tensor:
    """Row-stochastic matrix from the informative slot against the inverted
    uninformative slot; magnitudes of s2 are clamped at 1e-4, sign preserved."""
    s1, s2 = state.s1, state.s2
    sign = Tensor(np.where(s2.value >= 0, 1.0, -1.0))
    inv = ad.div(1.0, ad.mul(sign, ad.clamp_min(ad.absolute(s2), INVERSE_CLAMP)))
    outer = ad.mul(ad.reshape(s1, (s1.shape[0], s1.shape[1], 1)),
                   ad.reshape(inv, (inv.shape[0], 1, inv.shape[1])))
    return ad.softmax(outer, axis=-1)


def saliency_diagonal(state: SlotState) -> list[SaliencyCurve]:
    """Min-max normalized main diagonal of the saliency matrix, one curve per item.

    A constant diagonal normalizes to all ones (select everything). The curve is
    consumed by hard thresholding, so it is returned as plain values.
    """
    diag = ad.diagonal(saliency_matrix(state)).value
    curves = []
    for row in diag:
        lo, hi = row.min(), row.max()
        if hi - lo < 1e-12:
            curves.append(SaliencyCurve(np.ones_like(row)))
        else:
            curves.append(SaliencyCurve((row - lo) / (hi - lo)))
    return curves


def select_segments(curve: SaliencyCurve, t_frames: int, ms_per_frame: float,
                    duration_s: float, min_select_s: float = 0.25,
                    merge_gap_frames: int = 5) -> SegmentSet:
    """Threshold the curve at 0.5 and convert frame runs to time intervals.

    The curve is first interpolated to t_frames. Runs separated by fewer than
    merge_gap_frames low frames are merged. If the selection is shorter than
    min_select_s, the highest-saliency frames totaling that duration are taken
    instead, so the result is never empty. ms_per_frame is the effective frame
    spacing of the input the curve describes (the hop for an unstretched pass).
    """
    values = interp_columns(curve.values, t_frames)
    mask = values > 0.5
    frame_s = ms_per_frame / 1000.0
    if mask.sum() * frame_s < min_select_s:
        n_top = min(t_frames, max(1, math.ceil(min_select_s / frame_s)))
        top = np.argsort(-values, kind="stable")[:n_top]
        mask = np.zeros(t_frames, dtype=bool)
        mask[top] = True

    runs = _mask_to_runs(mask)
    runs = _merge_runs(runs, merge_gap_frames)
    intervals = []
    for a, b in runs:
        # frame i is centered at i*frame_s; runs touching either edge take it
        start = 0.0 if a == 0 else (a - 0.5) * frame_s
        end = duration_s if b == t_frames - 1 else min(duration_s, (b + 0.5) * frame_s)
        if end > start:
            intervals.append((start, end))
    if not intervals:  # pathological duration rounding; fall back to everything
        intervals = [(0.0, duration_s)]
    return SegmentSet(intervals, duration_s)


def _mask_to_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of true entries as inclusive (first, last) frame indices."""
    runs = []
    start = None
    for i, on in enumerate(mask):
        if on and start is None:
            start = i
        elif not on and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def _merge_runs(runs: list[tuple[int, int]], gap: int) -> list[tuple[int, int]]:
    if not runs:
        return runs
    merged = [runs[0]]
    for a, b in runs[1:]:
        if a - merged[-1][1] - 1 < gap:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged
