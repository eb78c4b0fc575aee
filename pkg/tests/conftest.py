import pytest

from playback.config import ModelConfig, TrainConfig
from playback.synth import SynthSpec, generate_dataset


def micro_model_config(**kw):
    base = dict(n_mels=32, patch_f=16, patch_t=10, clip_seconds=1.0, channels=16,
                depth=1, heads=2, latent_tokens=4, d_slot=8, slot_iters=2,
                slot_hidden=8, n_classes=4, n_playbacks=1)
    base.update(kw)
    return ModelConfig(**base)


def micro_train_config(**kw):
    base = dict(model=micro_model_config(), epochs=2, batch_size=8, base_lr=0.05,
                warmup_epochs=0.5, seed=0, val_every=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """16 train / 8 val clips, 1 s each, shared across trainer tests."""
    root = tmp_path_factory.mktemp("micro_data")
    spec = SynthSpec(n_train=16, n_val=8, clip_seconds=1.0, seed=11)
    manifests = generate_dataset(spec, root)
    return root, manifests
