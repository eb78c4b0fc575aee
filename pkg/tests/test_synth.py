"""Synthetic micro-gap dataset generation."""

import numpy as np
import pytest

from playback.synth import SynthSpec, generate_dataset, read_manifest, synth_clip


def small_spec(**kw):
    base = dict(n_train=8, n_val=4, clip_seconds=1.0, seed=5)
    base.update(kw)
    return SynthSpec(**base)


def directory_fingerprint(root):
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


class TestSynthSpec:
    def test_duplicate_gaps_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            SynthSpec(gaps_ms=[2.0, 2.0, 6.0, 8.0])

    def test_pattern_must_fit(self):
        with pytest.raises(ValueError, match="fit"):
            SynthSpec(clip_seconds=0.2, burst_ms=100.0)

    def test_unresolvable_gap_warning(self, caplog):
        with caplog.at_level("WARNING"):
            small_spec(finest_hop_ms=8.0)
        assert "finest hop" in caplog.text


class TestGeneration:
    def test_same_seed_gives_byte_identical_dataset(self, tmp_path):
        spec = small_spec()
        generate_dataset(spec, tmp_path / "a")
        generate_dataset(spec, tmp_path / "b")
        assert directory_fingerprint(tmp_path / "a") == directory_fingerprint(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        generate_dataset(small_spec(), tmp_path / "a")
        generate_dataset(small_spec(seed=6), tmp_path / "b")
        assert directory_fingerprint(tmp_path / "a") != directory_fingerprint(tmp_path / "b")

    def test_manifest_paths_and_balance(self, tmp_path):
        manifests = generate_dataset(small_spec(), tmp_path / "data")
        entries = read_manifest(manifests["train"])
        assert len(entries) == 8
        labels = [label for _, label in entries]
        assert sorted(set(labels)) == [0, 1, 2, 3]
        for path, _ in entries:
            assert path.exists()

    def test_empty_split_writes_header_only(self, tmp_path):
        manifests = generate_dataset(small_spec(n_train=0, n_val=0), tmp_path / "data")
        assert read_manifest(manifests["train"]) == []
        assert manifests["train"].read_text().strip() == "path,label"

    def test_clips_respect_amplitude_bounds(self):
        spec = small_spec(snr_db=0.0)
        rng = np.random.default_rng(0)
        for label in range(4):
            clip = synth_clip(spec, label, rng)
            assert np.abs(clip.samples).max() <= 0.95 + 1e-9
            assert len(clip.samples) == 16000


class TestMatchedFilterOracle:
    def test_noise_free_gaps_are_separable_by_cross_correlation(self):
        spec = small_spec(snr_db=None, max_distractors=1, gaps_ms=[4.0, 8.0],
                          n_classes=2)
        rng = np.random.default_rng(1)

        def template(gap_ms):
            n = int(16000 * spec.burst_ms / 1000.0)
            t = np.arange(n) / 16000.0
            burst = spec.amplitude * np.sin(2 * np.pi * spec.tone_hz * t)
            gap = np.zeros(int(16000 * gap_ms / 1000.0))
            return np.concatenate([burst, gap, burst])

        templates = [template(g) for g in spec.gaps_ms]
        hits = 0
        trials = 6
        for label in range(2):
            for _ in range(trials // 2):
                clip = synth_clip(spec, label, rng)
                scores = [np.correlate(clip.samples, tpl).max() for tpl in templates]
                hits += int(np.argmax(scores) == label)
        assert hits == trials
