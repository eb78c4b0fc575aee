"""Waveform I/O and the log-mel front end.

Converts raw audio to fixed-shape log-mel spectrograms at a playback-dependent
hop length, and materializes replays by cutting the selected raw-audio spans
and re-analyzing them at the reduced hop. Centered framing gives exactly
T = ceil(samples / hop) frames, so 10 s at 16 kHz with a 10 ms hop is 1000
frames. All functions are pure.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .autodiff import interp_columns

LOG_OFFSET = 1e-6


class AudioFormatError(ValueError):
    """Raised for malformed or unsupported WAV content."""


class ConfigError(ValueError):
    """Raised when front-end settings are unusable (for example hop <= 0)."""


@dataclass
class AudioClip:
    """PCM waveform with its sample rate. Samples are float64 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioFormatError("clip must be a non-empty 1-D sample array")
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise AudioFormatError("clip contains non-finite samples")
        peak = np.abs(self.samples).max()
        if peak > 1.0 + 1e-9:
            raise AudioFormatError(f"clip exceeds full scale (peak {peak:.6f})")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """F x T matrix of log-mel energies with its analysis hop length."""

    values: np.ndarray
    hop_ms: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] == 0:
            raise ConfigError(f"spectrogram must be F x T with T > 0, got {self.values.shape}")
        if self.hop_ms <= 0:
            raise ConfigError(f"hop must be positive, got {self.hop_ms} ms")
        if not np.isfinite(self.values).all():
            raise ConfigError("spectrogram contains non-finite entries")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class SegmentSet:
    """Sorted, disjoint (start_s, end_s) intervals within a clip."""

    intervals: list[tuple[float, float]]
    duration_s: float | None = None

    def __post_init__(self):
        if not self.intervals:
            raise ValueError("segment set must be non-empty")
        prev_end = 0.0
        for start, end in self.intervals:
            if start < -1e-9 or end <= start:
                raise ValueError(f"bad interval ({start}, {end})")
            if start < prev_end - 1e-9:
                raise ValueError(f"intervals overlap or are unsorted near ({start}, {end})")
            prev_end = end
        if self.duration_s is not None and prev_end > self.duration_s + 1e-9:
            raise ValueError(
                f"interval end {prev_end} exceeds clip duration {self.duration_s}")

    @classmethod
    def full(cls, clip: AudioClip) -> "SegmentSet":
        return cls([(0.0, clip.duration_s)], clip.duration_s)

    @property
    def total_s(self) -> float:
        return sum(end - start for start, end in self.intervals)


# ---------------------------------------------------------------------------
# WAV I/O

def load_wav(path) -> AudioClip:
    """Parse a RIFF/WAVE file containing 16-bit PCM, mono or stereo.

    Stereo is averaged to mono; integer samples are scaled by 1/32768.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF":
        raise AudioFormatError(f"{path}: missing 'RIFF' chunk header")
    if data[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: RIFF form type is {data[8:12]!r}, not 'WAVE'")

    fmt = None
    pcm = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset:offset + 4]
        (size,) = struct.unpack("<I", data[offset + 4:offset + 8])
        body = data[offset + 8:offset + 8 + size]
        if len(body) < size:
            raise AudioFormatError(f"{path}: chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            if size < 16:
                raise AudioFormatError(f"{path}: chunk b'fmt ' too short ({size} bytes)")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            pcm = body
        offset += 8 + size + (size & 1)

    if fmt is None:
        raise AudioFormatError(f"{path}: no b'fmt ' chunk found")
    if pcm is None:
        raise AudioFormatError(f"{path}: no b'data' chunk found")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise AudioFormatError(
            f"{path}: unsupported encoding tag {audio_format} (only PCM is supported)")
    if bits != 16:
        raise AudioFormatError(f"{path}: unsupported sample width {bits} bits (need 16)")
    if channels not in (1, 2):
        raise AudioFormatError(f"{path}: unsupported channel count {channels}")

    frames = np.frombuffer(pcm[:len(pcm) - len(pcm) % (2 * channels)], dtype="<i2")
    if channels == 2:
        samples = frames.reshape(-1, 2).mean(axis=1) / 32768.0
    else:
        samples = frames.astype(np.float64) / 32768.0
    return AudioClip(samples, sample_rate)


def save_wav(path, clip: AudioClip) -> None:
    """Write a mono 16-bit PCM WAV; inverse of the loader's 1/32768 scaling."""
    quantized = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(clip.sample_rate)
        out.writeframes(quantized.tobytes())


# ---------------------------------------------------------------------------
# resampling and segment surgery

def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Linear-interpolation resampling; identity when the rates already match."""
    if target_hz <= 0:
        raise ConfigError(f"target rate must be positive, got {target_hz}")
    if target_hz == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n_out = int(round(len(clip.samples) * target_hz / clip.sample_rate))
    n_out = max(n_out, 1)
    positions = np.arange(n_out) * (clip.sample_rate / target_hz)
    positions = np.minimum(positions, len(clip.samples) - 1)
    lo = np.floor(positions).astype(np.intp)
    hi = np.minimum(lo + 1, len(clip.samples) - 1)
    frac = positions - lo
    out = clip.samples[lo] * (1.0 - frac) + clip.samples[hi] * frac
    return AudioClip(out, target_hz)


def _second_to_sample(t_s: float, sample_rate: int) -> int:
    # round half up, per the boundary convention
    return int(math.floor(t_s * sample_rate + 0.5))


def extract_segments(clip: AudioClip, segments: SegmentSet) -> AudioClip:
    """Concatenate the raw-sample spans of the segments, in order."""
    spans = []
    n = len(clip.samples)
    for start_s, end_s in segments.intervals:
        start = _second_to_sample(start_s, clip.sample_rate)
        end = _second_to_sample(end_s, clip.sample_rate)
        start = min(max(start, 0), n - 1)
        end = min(max(end, start + 1), n)
        spans.append(clip.samples[start:end])
    return AudioClip(np.concatenate(spans), clip.sample_rate)


# ---------------------------------------------------------------------------
# log-mel analysis

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filterbank from 0 Hz to Nyquist, peak 1, on rfft bins."""
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - left) / max(center - left, 1e-12)
        down = (right - bin_hz) / max(right - center, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def log_mel_spectrogram(clip: AudioClip, hop_ms: float, n_mels: int = 128,
                        win_ms: float = 25.0, n_fft: int = 512) -> MelSpectrogram:
    """Centered-framing log-mel analysis.

    Reflect padding of half a window on each side yields exactly
    T = ceil(samples / hop_samples) frames; frame t is centered on sample
    t * hop_samples. Hann window, power spectrum, triangular HTK-mel
    filterbank, then log(energy + 1e-6).
    """
    sr = clip.sample_rate
    hop = int(round(sr * hop_ms / 1000.0))
    win = int(round(sr * win_ms / 1000.0))
    if hop < 1:
        raise ConfigError(f"hop {hop_ms} ms is shorter than one sample at {sr} Hz")
    if n_fft < win:
        raise ConfigError(f"n_fft {n_fft} smaller than window ({win} samples)")
    x = clip.samples
    if len(x) < hop:
        raise ConfigError(f"clip of {len(x)} samples shorter than one hop ({hop})")
    half = win // 2
    if len(x) <= half:
        raise ConfigError(f"clip of {len(x)} samples too short for a {win}-sample window")

    t_frames = -(-len(x) // hop)
    pad_right = max(0, (t_frames - 1) * hop + win - half - len(x))
    pad_right = min(pad_right, len(x) - 1)
    padded = np.pad(x, (half, pad_right), mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[::hop][:t_frames]
    if frames.shape[0] < t_frames:  # window ran past even the padded tail
        extra = np.zeros((t_frames - frames.shape[0], win))
        frames = np.vstack([frames, extra])

    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    spectrum = np.fft.rfft(frames * window, n=n_fft, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel = power @ mel_filterbank(n_mels, n_fft, sr).T
    return MelSpectrogram(np.log(mel + LOG_OFFSET).T, hop_ms)


def fit_to_frames(spec: MelSpectrogram, t_target: int) -> MelSpectrogram:
    """Resize the time axis to t_target columns by linear interpolation.

    Identity when sizes already match; endpoints are preserved and the
    frequency axis is untouched.
    """
    if t_target <= 0:
        raise ConfigError(f"target frame count must be positive, got {t_target}")
    if spec.n_frames == t_target:
        return spec
    return MelSpectrogram(interp_columns(spec.values, t_target), spec.hop_ms)


# ---------------------------------------------------------------------------
# playback schedule

def hop_for_pass(base_hop_ms: float, decrement_ms: float, pass_index: int) -> float:
    if pass_index < 1:
        raise ConfigError(f"pass index must be >= 1, got {pass_index}")
    hop = base_hop_ms - (pass_index - 1) * decrement_ms
    if hop <= 0:
        raise ConfigError(
            f"hop schedule exhausted: pass {pass_index} would use {hop} ms")
    return hop


def frames_for_clip(clip: AudioClip, base_hop_ms: float, patch_t: int = 1) -> int:
    """Pass-1 frame count, rounded up to a multiple of the temporal patch size."""
    hop = int(round(clip.sample_rate * base_hop_ms / 1000.0))
    t_raw = -(-len(clip.samples) // hop)
    return -(-t_raw // patch_t) * patch_t


def make_playback_input(clip: AudioClip, segments: SegmentSet, pass_index: int,
                        cfg, target_frames: int | None = None) -> MelSpectrogram:
    """Spectrogram for one playback: cut the segments, analyze at the pass's
    reduced hop, and resize to the pass-1 frame count.

    cfg needs base_hop_ms, hop_decrement_ms, n_mels, win_ms, n_fft and patch_t.
    target_frames overrides the clip-derived pass-1 frame count; the model
    passes its fixed input width here because later passes hand in the
    already-extracted sub-clip.
    """
    hop = hop_for_pass(cfg.base_hop_ms, cfg.hop_decrement_ms, pass_index)
    sub = extract_segments(clip, segments)
    spec = log_mel_spectrogram(sub, hop, n_mels=cfg.n_mels, win_ms=cfg.win_ms, n_fft=cfg.n_fft)
    if target_frames is None:
        target_frames = frames_for_clip(clip, cfg.base_hop_ms, cfg.patch_t)
    return fit_to_frames(spec, target_frames)


# ---------------------------------------------------------------------------
# spectrogram export

def write_spectrogram_csv(spec: MelSpectrogram, path) -> None:
    with open(path, "w") as out:
        for row in spec.values:
            out.write(",".join(f"{v:.6e}" for v in row))
            out.write("\n")


def write_spectrogram_pgm(spec: MelSpectrogram, path) -> None:
    """8-bit binary PGM, min-max scaled, one pixel per time-frequency cell."""
    v = spec.values
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi - lo < 1e-12 else (v - lo) / (hi - lo)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
