"""Synthetic micro-gap dataset.

Each class is a pair of identical tone bursts separated by a class-specific
gap of a few milliseconds, dropped at a random offset into Gaussian noise,
with one to three single distractor bursts elsewhere. Telling classes apart
requires resolving the gap, which rewards finer temporal resolution.
Generation is fully deterministic under the configured seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, save_wav

logger = logging.getLogger(__name__)

EDGE_MARGIN_S = 0.10
DISTRACTOR_CLEARANCE_S = 0.05


@dataclass
class SynthSpec:
    n_classes: int = 4
    gaps_ms: list[float] = field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0])
    clip_seconds: float = 2.0
    tone_hz: float = 1000.0
    burst_ms: float = 25.0
    snr_db: float | None = 10.0
    n_train: int = 2000
    n_val: int = 500
    seed: int = 0
    sample_rate: int = 16000
    amplitude: float = 0.5
    max_distractors: int = 3
    finest_hop_ms: float | None = None

    def __post_init__(self):
        if self.n_classes != len(self.gaps_ms):
            raise ValueError(f"{self.n_classes} classes but {len(self.gaps_ms)} gaps")
        if len(set(self.gaps_ms)) != len(self.gaps_ms):
            raise ValueError(f"gap durations must be distinct, got {self.gaps_ms}")
        pattern_s = (2 * self.burst_ms + max(self.gaps_ms)) / 1000.0
        if pattern_s + 2 * EDGE_MARGIN_S >= self.clip_seconds:
            raise ValueError(
                f"burst pattern of {pattern_s:.3f}s does not fit in {self.clip_seconds}s clips")
        if self.finest_hop_ms is not None and min(self.gaps_ms) < self.finest_hop_ms:
            logger.warning(
                "smallest gap (%.1f ms) is below the finest hop (%.1f ms); "
                "the task may be unlearnable", min(self.gaps_ms), self.finest_hop_ms)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        data = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown SynthSpec keys: {unknown}")
        return cls(**data)


def _burst(spec: SynthSpec) -> np.ndarray:
    n = int(round(spec.sample_rate * spec.burst_ms / 1000.0))
    t = np.arange(n) / spec.sample_rate
    return spec.amplitude * np.sin(2.0 * np.pi * spec.tone_hz * t)


def synth_clip(spec: SynthSpec, label: int, rng: np.random.Generator) -> AudioClip:
    """One clip of the given class: noise + the gap pattern + distractors."""
    clip, _ = synth_clip_with_span(spec, label, rng)
    return clip


def synth_clip_with_span(spec: SynthSpec, label: int,
                         rng: np.random.Generator) -> tuple[AudioClip, tuple[float, float]]:
    """Like synth_clip, also returning the burst pattern's (start_s, end_s)."""
    n = int(round(spec.sample_rate * spec.clip_seconds))
    burst = _burst(spec)
    gap = int(round(spec.sample_rate * spec.gaps_ms[label] / 1000.0))
    pattern = np.concatenate([burst, np.zeros(gap), burst])

    if spec.snr_db is None:
        x = np.zeros(n)
    else:
        signal_power = spec.amplitude ** 2 / 2.0
        noise_sigma = np.sqrt(signal_power / 10.0 ** (spec.snr_db / 10.0))
        x = rng.normal(0.0, noise_sigma, size=n)

    margin = int(round(spec.sample_rate * EDGE_MARGIN_S))
    start = int(rng.integers(margin, n - margin - len(pattern) + 1))
    x[start:start + len(pattern)] += pattern
    occupied = [(start, start + len(pattern))]

    clearance = int(round(spec.sample_rate * DISTRACTOR_CLEARANCE_S))
    n_distract = int(rng.integers(1, spec.max_distractors + 1))
    for _ in range(n_distract):
        for _attempt in range(64):
            pos = int(rng.integers(0, n - len(burst) + 1))
            span = (pos - clearance, pos + len(burst) + clearance)
            if all(span[1] <= lo or span[0] >= hi for lo, hi in occupied):
                x[pos:pos + len(burst)] += burst
                occupied.append((pos, pos + len(burst)))
                break

    peak = np.abs(x).max()
    if peak > 0.95:
        x = x * (0.95 / peak)
    span = (start / spec.sample_rate, (start + len(pattern)) / spec.sample_rate)
    return AudioClip(x, spec.sample_rate), span


def generate_dataset(spec: SynthSpec, out_dir) -> dict[str, Path]:
    """Write WAV files and CSV manifests for the train/val splits.

    Labels cycle through the classes so splits are balanced. Returns the
    manifest paths; an empty split still gets a (header-only) manifest.
    """
    out_dir = Path(out_dir)
    manifests: dict[str, Path] = {}
    for split_index, (split, count) in enumerate((("train", spec.n_train),
                                                  ("val", spec.n_val))):
        rng = np.random.default_rng([spec.seed, split_index])
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        manifest = out_dir / f"{split}.csv"
        with open(manifest, "w", newline="") as out:
            writer = csv.writer(out)
            writer.writerow(["path", "label"])
            for i in range(count):
                label = i % spec.n_classes
                clip = synth_clip(spec, label, rng)
                rel = f"{split}/{i:05d}.wav"
                save_wav(out_dir / rel, clip)
                writer.writerow([rel, label])
        manifests[split] = manifest
    (out_dir / "synth_spec.json").write_text(
        json.dumps(dataclasses.asdict(spec), indent=2) + "\n")
    return manifests


def read_manifest(path) -> list[tuple[Path, int]]:
    base = Path(path).parent
    entries = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            entries.append((base / row["path"], int(row["label"])))
    return entries
