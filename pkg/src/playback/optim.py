"""SGD with momentum and weight decay, plus the warmup/cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def cosine_lr(epoch_fraction: float, base_lr: float, warmup_epochs: float,
              total_epochs: float) -> float:
    """Linear warmup to base_lr, then half-cosine decay to zero."""
    if not 0.0 <= epoch_fraction <= total_epochs:
        raise ValueError(f"epoch_fraction {epoch_fraction} outside [0, {total_epochs}]")
    if warmup_epochs > 0 and epoch_fraction < warmup_epochs:
        return base_lr * epoch_fraction / warmup_epochs
    span = total_epochs - warmup_epochs
    progress = 0.0 if span <= 0 else (epoch_fraction - warmup_epochs) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class OptimState:
    """Momentum buffers plus step counter and schedule settings."""

    def __init__(self, named_params: list[tuple[str, Tensor]], momentum: float = 0.9,
                 weight_decay: float = 1e-4, base_lr: float = 0.1,
                 warmup_epochs: float = 2.5, total_epochs: float = 50.0):
        self.named_params = named_params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.total_epochs = total_epochs
        self.step_count = 0
        self.buffers = {name: np.zeros_like(p.value) for name, p in named_params}

    def lr_at(self, epoch_fraction: float) -> float:
        return cosine_lr(epoch_fraction, self.base_lr, self.warmup_epochs, self.total_epochs)


def sgd_step(state: OptimState, lr: float) -> None:
    """v <- momentum*v + grad + weight_decay*w; w <- w - lr*v. Missing grads count as zero."""
    for name, p in state.named_params:
        g = p.grad if p.grad is not None else 0.0
        v = state.buffers[name]
        v = state.momentum * v + g + state.weight_decay * p.value
        state.buffers[name] = v
        p.value = p.value - lr * v
        p.grad = None
    state.step_count += 1
