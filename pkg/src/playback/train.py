"""Training loop, checkpoint selection and evaluation.

One logical optimizer thread; minibatches are shuffled with a seeded
generator and processed in a fixed order, so identical seed and config give
bitwise-identical metric logs and checkpoints.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, load_wav
from .autodiff import NumericsError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .decoder import PlaybackModel
from .losses import LossConfig, mixup, one_hot, total_loss
from .metrics import MetricsReport, compute_metrics, top_k_accuracy
from .optim import OptimState, sgd_step
from .synth import read_manifest

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite, with epoch/step context."""


@dataclass
class LoadedDataset:
    """Waveforms cached as int16 to keep 2000 clips comfortably in memory."""

    waveforms: list[np.ndarray]
    labels: np.ndarray
    sample_rate: int

    def __len__(self) -> int:
        return len(self.waveforms)

    def clip(self, index: int) -> AudioClip:
        return AudioClip(self.waveforms[index] / 32768.0, self.sample_rate)

    def raw_batch(self, indices) -> np.ndarray:
        return np.stack([self.waveforms[i] for i in indices]).astype(np.float64) / 32768.0


def load_dataset(manifest_path) -> LoadedDataset:
    entries = read_manifest(manifest_path)
    if not entries:
        raise ValueError(f"manifest {manifest_path} lists no files")
    waveforms, labels = [], []
    sample_rate = None
    for path, label in entries:
        clip = load_wav(path)
        if sample_rate is None:
            sample_rate = clip.sample_rate
        elif clip.sample_rate != sample_rate:
            raise ValueError(f"{path}: sample rate {clip.sample_rate} != {sample_rate}")
        waveforms.append(np.round(clip.samples * 32768.0).astype(np.int16))
        labels.append(label)
    return LoadedDataset(waveforms, np.asarray(labels, dtype=np.int64), sample_rate)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_top1: float | None


@dataclass
class TrainResult:
    records: list[EpochRecord] = field(default_factory=list)
    best_val_top1: float = -1.0
    best_epoch: int = -1


def _format(x: float) -> str:
    return repr(float(x))


def train_model(cfg: TrainConfig, train_manifest, val_manifest, out_ckpt,
                log_path=None) -> TrainResult:
    """Train from a manifest, checkpointing the best validation top-1.

    Writes a CSV metrics log (epoch, lr, train_loss, val_top1) and a JSON
    sidecar with the model configuration next to the checkpoint.
    """
    train_set = load_dataset(train_manifest)
    val_set = load_dataset(val_manifest) if val_manifest else None
    n_classes = cfg.model.n_classes
    if int(train_set.labels.max()) >= n_classes:
        raise ValueError(
            f"dataset has label {int(train_set.labels.max())} but model expects "
            f"{n_classes} classes")

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(seeds[0])
    mixup_rng = np.random.default_rng(seeds[1])
    slot_rng = np.random.default_rng(seeds[2])

    model = PlaybackModel(cfg.model, seed=cfg.seed)
    named = list(model.named_parameters())
    optim = OptimState(named, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                       base_lr=cfg.base_lr, warmup_epochs=cfg.warmup_epochs,
                       total_epochs=cfg.epochs)
    loss_cfg = LossConfig(cfg.gamma, cfg.beta, cfg.model.n_playbacks, cfg.model.label_mode)

    result = TrainResult()
    out_ckpt = Path(out_ckpt)
    out_ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out_ckpt.with_suffix(".log.csv")
    log_lines = ["epoch,lr,train_loss,val_top1"]

    n = len(train_set)
    batches_per_epoch = -(-n // cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        last_lr = 0.0
        for b in range(batches_per_epoch):
            indices = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            epoch_fraction = epoch + b / batches_per_epoch
            lr = optim.lr_at(epoch_fraction)
            last_lr = lr
            try:
                loss = _train_step(model, optim, train_set, indices, cfg, loss_cfg,
                                   mixup_rng, slot_rng, lr)
            except NumericsError as exc:
                raise TrainingDiverged(
                    f"non-finite values at epoch {epoch}, step {b}: {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, step {b}")
            epoch_loss += loss
        epoch_loss /= batches_per_epoch

        val_top1 = None
        is_last = epoch == cfg.epochs - 1
        if val_set is not None and ((epoch + 1) % cfg.val_every == 0 or is_last):
            val_top1 = _validation_top1(model, val_set, cfg.batch_size)
            if val_top1 > result.best_val_top1:
                result.best_val_top1 = val_top1
                result.best_epoch = epoch
                save_checkpoint(out_ckpt, model.state_dict())
        result.records.append(EpochRecord(epoch, last_lr, epoch_loss, val_top1))
        log_lines.append(
            f"{epoch},{_format(last_lr)},{_format(epoch_loss)},"
            f"{'' if val_top1 is None else _format(val_top1)}")
        logger.info("epoch %d: loss %.4f%s", epoch, epoch_loss,
                    "" if val_top1 is None else f", val top-1 {val_top1:.2f}")

    if val_set is None:
        save_checkpoint(out_ckpt, model.state_dict())
    _write_sidecar(out_ckpt, cfg)
    log_path.write_text("\n".join(log_lines) + "\n")
    return result


def _train_step(model, optim, train_set, indices, cfg, loss_cfg,
                mixup_rng, slot_rng, lr) -> float:
    waveforms = train_set.raw_batch(indices)
    targets = one_hot(train_set.labels[indices], cfg.model.n_classes)
    waveforms, targets = mixup(waveforms, targets, cfg.mixup_alpha, mixup_rng)
    clips = [AudioClip(w, train_set.sample_rate) for w in waveforms]
    out = model.forward_batch(clips, train=True, rng=slot_rng)
    loss = total_loss(out.logits_per_pass, targets, loss_cfg)
    for _, p in optim.named_params:
        p.zero_grad()
    loss.backward()
    sgd_step(optim, lr)
    return loss.item()


def _validation_top1(model, dataset: LoadedDataset, batch_size: int) -> float:
    probs = _infer_dataset(model, dataset, batch_size)
    return top_k_accuracy(probs, dataset.labels, 1)


def _infer_dataset(model, dataset: LoadedDataset, batch_size: int) -> np.ndarray:
    chunks = []
    for start in range(0, len(dataset), batch_size):
        clips = [dataset.clip(i) for i in range(start, min(start + batch_size, len(dataset)))]
        chunks.append(model.infer_batch(clips))
    return np.concatenate(chunks)


def _write_sidecar(ckpt_path: Path, cfg: TrainConfig) -> None:
    import dataclasses as dc
    sidecar = Path(str(ckpt_path) + ".json")
    sidecar.write_text(json.dumps({"model": dc.asdict(cfg.model)}, indent=2) + "\n")


def load_model(ckpt_path, model_cfg: ModelConfig | None = None) -> PlaybackModel:
    """Rebuild a model from a checkpoint, reading the config sidecar if present."""
    ckpt_path = Path(ckpt_path)
    if model_cfg is None:
        sidecar = Path(str(ckpt_path) + ".json")
        if not sidecar.exists():
            raise FileNotFoundError(
                f"{sidecar} not found; pass the model configuration explicitly")
        model_cfg = ModelConfig(**json.loads(sidecar.read_text())["model"])
    model = PlaybackModel(model_cfg, seed=0)
    model.load_state_dict(load_checkpoint(ckpt_path))
    return model


@dataclass
class EvalReport:
    metrics: MetricsReport
    per_pass_top1: list[float]
    n_samples: int

    def as_dict(self) -> dict:
        return {**self.metrics.as_dict(), "per_pass_top1": self.per_pass_top1,
                "n_samples": self.n_samples}


def evaluate_checkpoint(ckpt_path, manifest_path,
                        model_cfg: ModelConfig | None = None,
                        batch_size: int = 16) -> EvalReport:
    """Averaged-probability metrics plus per-pass top-1 for the trend readout."""
    model = load_model(ckpt_path, model_cfg)
    dataset = load_dataset(manifest_path)
    if int(dataset.labels.max()) >= model.cfg.n_classes:
        raise ValueError(
            f"dataset label {int(dataset.labels.max())} out of range for "
            f"{model.cfg.n_classes}-class checkpoint")

    per_pass_scores = [[] for _ in range(model.cfg.n_passes)]
    averaged = []
    for start in range(0, len(dataset), batch_size):
        clips = [dataset.clip(i) for i in range(start, min(start + batch_size, len(dataset)))]
        out = model.forward_batch(clips, train=False)
        probs = [model.probabilities(lg).value for lg in out.logits_per_pass]
        for p, arr in enumerate(probs):
            per_pass_scores[p].append(arr)
        averaged.append(np.mean(probs, axis=0))

    averaged = np.concatenate(averaged)
    per_pass_top1 = [top_k_accuracy(np.concatenate(chunks), dataset.labels, 1)
                     for chunks in per_pass_scores]
    return EvalReport(compute_metrics(averaged, dataset.labels),
                      per_pass_top1, len(dataset))
