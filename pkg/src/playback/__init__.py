"""Audio classification that replays its most informative segments.

The model classifies a clip, lets two competing attention slots mark the
discriminative time spans, re-analyzes just those spans at a finer hop
length, and fuses the per-playback decisions with a recurrent transformer
decoder trained under a confidence-ranking loss.
"""

from .audio import (AudioClip, MelSpectrogram, SegmentSet, extract_segments,
                    fit_to_frames, load_wav, log_mel_spectrogram,
                    make_playback_input, resample, save_wav)
from .autodiff import Tensor, grad_check
from .config import ModelConfig, TrainConfig, synthetic_preset
from .decoder import PlaybackModel, PlaybackTrace
from .losses import LossConfig, mixup, rank_loss, total_loss
from .metrics import MetricsReport, compute_metrics, d_prime_from_auc
from .optim import OptimState, cosine_lr, sgd_step
from .slots import SaliencyCurve, select_segments
from .synth import SynthSpec, generate_dataset
from .train import evaluate_checkpoint, train_model

__all__ = [
    "AudioClip", "MelSpectrogram", "SegmentSet", "Tensor", "ModelConfig",
    "TrainConfig", "PlaybackModel", "PlaybackTrace", "LossConfig",
    "MetricsReport", "SaliencyCurve", "SynthSpec", "OptimState",
    "load_wav", "save_wav", "resample", "log_mel_spectrogram",
    "extract_segments", "fit_to_frames", "make_playback_input",
    "grad_check", "cosine_lr", "sgd_step", "rank_loss", "total_loss",
    "mixup", "compute_metrics", "d_prime_from_auc", "select_segments",
    "generate_dataset", "train_model", "evaluate_checkpoint",
    "synthetic_preset",
]

__version__ = "0.1.0"
