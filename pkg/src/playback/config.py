"""Model and training configuration with JSON round-tripping.

Defaults follow the reference operating point (16 kHz, 128 mel bins, 10 ms
base hop reduced by 1 ms per playback, 16x20 patches so a 10 s clip yields
50 temporal tokens). The synthetic preset shrinks everything to desk scale.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .audio import ConfigError, hop_for_pass


@dataclass
class ModelConfig:
    sample_rate: int = 16000
    n_mels: int = 128
    win_ms: float = 25.0
    n_fft: int = 512
    base_hop_ms: float = 10.0
    hop_decrement_ms: float = 1.0
    clip_seconds: float = 10.0
    n_playbacks: int = 3
    patch_f: int = 16
    patch_t: int = 20
    channels: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    latent_tokens: int = 16
    d_slot: int = 64
    slot_iters: int = 3
    slot_hidden: int = 64
    n_classes: int = 4
    label_mode: str = "single"
    min_select_s: float = 0.25
    merge_gap_frames: int = 5

    def __post_init__(self):
        self.validate()

    @property
    def n_passes(self) -> int:
        return self.n_playbacks + 1

    @property
    def input_frames(self) -> int:
        """Fixed model frame count: pass-1 frames rounded up to a patch multiple."""
        hop = int(round(self.sample_rate * self.base_hop_ms / 1000.0))
        n_samples = int(round(self.clip_seconds * self.sample_rate))
        t_raw = -(-n_samples // hop)
        return -(-t_raw // self.patch_t) * self.patch_t

    @property
    def grid(self) -> tuple[int, int]:
        return self.n_mels // self.patch_f, self.input_frames // self.patch_t

    @property
    def patch_dim(self) -> int:
        return self.patch_f * self.patch_t

    def hop_schedule(self) -> list[float]:
        return [hop_for_pass(self.base_hop_ms, self.hop_decrement_ms, p)
                for p in range(1, self.n_passes + 1)]

    def validate(self) -> None:
        if self.n_playbacks < 0:
            raise ConfigError(f"n_playbacks must be >= 0, got {self.n_playbacks}")
        if self.n_mels % self.patch_f != 0:
            divisors = [d for d in range(1, self.n_mels + 1) if self.n_mels % d == 0]
            raise ConfigError(
                f"n_mels {self.n_mels} not divisible by patch_f {self.patch_f}; "
                f"valid sizes: {divisors}")
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.label_mode not in ("single", "multi"):
            raise ConfigError(f"label_mode must be 'single' or 'multi', got {self.label_mode!r}")
        if self.d_slot < 2:
            raise ConfigError(f"d_slot must be >= 2, got {self.d_slot}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if int(round(self.sample_rate * self.win_ms / 1000.0)) > self.n_fft:
            raise ConfigError(
                f"window of {self.win_ms} ms at {self.sample_rate} Hz exceeds n_fft {self.n_fft}")
        # fails fast at startup when the hop schedule would go non-positive
        self_hops = [hop_for_pass(self.base_hop_ms, self.hop_decrement_ms, p)
                     for p in range(1, self.n_passes + 1)]
        del self_hops


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: float = 2.5
    mixup_alpha: float = 0.0
    gamma: float = 0.05
    beta: float = 0.7
    seed: int = 0
    val_every: int = 1

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.gamma < 0:
            raise ConfigError(f"ranking margin must be >= 0, got {self.gamma}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.mixup_alpha < 0:
            raise ConfigError(f"mixup_alpha must be >= 0, got {self.mixup_alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


def synthetic_preset(**overrides) -> TrainConfig:
    """Desk-scale setup that trains in minutes on one CPU core."""
    model_overrides = overrides.pop("model", {})
    model = ModelConfig(**{
        "n_mels": 32, "patch_f": 16, "patch_t": 10, "clip_seconds": 2.0,
        "n_playbacks": 2, "latent_tokens": 8, "d_slot": 32, "n_classes": 4,
        **model_overrides})
    return TrainConfig(model=model, **{"epochs": 30, "batch_size": 16,
                                       "base_lr": 0.005, **overrides})


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    return cls(**data)


def load_train_config(path) -> TrainConfig:
    data = json.loads(Path(path).read_text())
    if "model" in data and isinstance(data["model"], dict):
        data["model"] = _from_dict(ModelConfig, data["model"])
    return _from_dict(TrainConfig, data)


def save_train_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(dataclasses.asdict(cfg), indent=2) + "\n")
