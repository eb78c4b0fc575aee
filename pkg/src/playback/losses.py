"""Confidence-ranking and classification losses, plus mixup.

The ranking loss pushes each playback's correct-class probability above every
earlier playback's by a margin, weighting nearer pairs more: the pair (m, i)
carries weight 1/(i-m). The total objective is the first pass's classification
loss plus, for every later pass i, beta * cls(i) + (1-beta) * rank(i).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LossConfig:
    gamma: float = 0.05
    beta: float = 0.7
    n_playbacks: int = 3
    label_mode: str = "single"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"ranking margin must be >= 0, got {self.gamma}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


def rank_loss(p_correct_per_pass: list, i: int, gamma: float) -> Tensor:
    """Hinge penalty of pass i against every earlier pass m, weighted 1/(i-m).

    p_correct_per_pass holds the correct-class probability of passes 1..i
    (scalars or batched Tensors); entries may be Tensors for gradient flow.
    Zero exactly when p_i >= p_m + gamma for all m < i.
    """
    if i < 2:
        raise ValueError(f"rank loss needs pass index >= 2, got {i}")
    if len(p_correct_per_pass) < i:
        raise ValueError(f"need probabilities for {i} passes, got {len(p_correct_per_pass)}")
    p_i = ad.as_tensor(p_correct_per_pass[i - 1])
    total = None
    for m in range(1, i):
        weight = 1.0 / (i - m)
        p_m = ad.as_tensor(p_correct_per_pass[m - 1])
        hinge = ad.max_with_zero(ad.add(ad.sub(gamma, p_i), p_m))
        term = ad.mul(hinge, weight)
        total = term if total is None else ad.add(total, term)
    return total


def log_softmax(logits: Tensor) -> Tensor:
    shift = Tensor(logits.value.max(axis=-1, keepdims=True))
    shifted = ad.sub(logits, shift)
    lse = ad.log(ad.tensor_sum(ad.exp(shifted), axis=-1, keepdims=True))
    return ad.sub(shifted, lse)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy against (soft) target distributions, shape (B, n)."""
    weighted = ad.mul(log_softmax(logits), Tensor(targets))
    return ad.mul(mean_over_batch(ad.tensor_sum(weighted, axis=-1)), -1.0)


def binary_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over classes and batch of the per-label binary cross-entropy."""
    t = Tensor(targets)
    pos = ad.mul(t, ad.softplus(ad.mul(logits, -1.0)))
    neg = ad.mul(ad.sub(1.0, t), ad.softplus(logits))
    return mean_over_batch(ad.mean(ad.add(pos, neg), axis=-1))


def mean_over_batch(x: Tensor) -> Tensor:
    return ad.mean(x) if x.ndim > 0 else x


def correct_class_probability(logits: Tensor, targets: np.ndarray, label_mode: str) -> Tensor:
    """p(correct) per batch item: the softmax probability of the dominant target
    class in single-label mode, the mean sigmoid probability over positive
    labels in multi-label mode."""
    if label_mode == "single":
        probs = ad.softmax(logits, axis=-1)
        pick = np.zeros_like(targets)
        pick[np.arange(targets.shape[0]), targets.argmax(axis=-1)] = 1.0
        return ad.tensor_sum(ad.mul(probs, Tensor(pick)), axis=-1)
    probs = ad.sigmoid(logits)
    positives = (targets > 0.5).astype(np.float64)
    counts = np.maximum(positives.sum(axis=-1), 1.0)
    return ad.div(ad.tensor_sum(ad.mul(probs, Tensor(positives)), axis=-1), Tensor(counts))


def classification_loss(logits: Tensor, targets: np.ndarray, label_mode: str) -> Tensor:
    if label_mode == "single":
        return cross_entropy(logits, targets)
    return binary_cross_entropy(logits, targets)


def total_loss(logits_per_pass: list[Tensor], targets: np.ndarray, cfg: LossConfig) -> Tensor:
    """cls(1) + sum over later passes of beta*cls(i) + (1-beta)*rank(i)."""
    n_passes = len(logits_per_pass)
    targets = np.asarray(targets, dtype=np.float64)
    loss = classification_loss(logits_per_pass[0], targets, cfg.label_mode)
    if n_passes == 1:
        return loss
    p_correct = [correct_class_probability(lg, targets, cfg.label_mode)
                 for lg in logits_per_pass]
    for i in range(2, n_passes + 1):
        cls_i = classification_loss(logits_per_pass[i - 1], targets, cfg.label_mode)
        rank_i = mean_over_batch(rank_loss(p_correct, i, cfg.gamma))
        loss = ad.add(loss, ad.add(ad.mul(cls_i, cfg.beta), ad.mul(rank_i, 1.0 - cfg.beta)))
    return loss


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def mixup(waveforms: np.ndarray, targets: np.ndarray, alpha: float,
          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of each sample with a shuffled partner.

    Applied on raw waveforms so every playback sees a consistent mixture.
    Disabled (identity) when alpha is 0.
    """
    if alpha <= 0:
        return waveforms, targets
    lam = rng.beta(alpha, alpha)
    partner = rng.permutation(len(waveforms))
    mixed_x = lam * waveforms + (1.0 - lam) * waveforms[partner]
    mixed_y = lam * targets + (1.0 - lam) * targets[partner]
    return mixed_x, mixed_y
