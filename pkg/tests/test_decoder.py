"""Recurrent decoder, classification head and the multi-pass pipeline."""

import numpy as np
import pytest

from playback import autodiff as ad
from playback.audio import AudioClip, ConfigError
from playback.autodiff import Tensor, grad_check
from playback.config import ModelConfig
from playback.decoder import (DecoderLatent, PlaybackDecoder, PlaybackModel)
from playback.encoder import EncodedFeatures


def tiny_cfg(**kw):
    base = dict(n_mels=32, patch_f=16, patch_t=10, clip_seconds=1.0, channels=16,
                depth=2, heads=2, latent_tokens=4, d_slot=8, slot_iters=2,
                slot_hidden=8, n_classes=3, n_playbacks=1)
    base.update(kw)
    return ModelConfig(**base)


def make_clip(seconds=1.0, seed=0, rate=16000):
    rng = np.random.default_rng(seed)
    n = int(seconds * rate)
    t = np.arange(n) / rate
    wav = 0.3 * np.sin(2 * np.pi * 700 * t) + 0.05 * rng.standard_normal(n)
    wav[n // 3:n // 3 + n // 10] += 0.4 * np.sin(2 * np.pi * 2500 * t[:n // 10])
    return AudioClip(np.clip(wav, -1, 1), rate)


class TestDecodeBlock:
    def test_zero_value_projection_closes_information_gate(self):
        cfg = tiny_cfg()
        rng = np.random.default_rng(0)
        dec = PlaybackDecoder(rng, cfg)
        dec.cross.wv.w.value[:] = 0.0
        dec.cross.wv.b.value[:] = 0.0
        dec.cross.wo.b.value[:] = 0.0
        v0 = DecoderLatent(Tensor(np.random.default_rng(1).normal(size=(2, 4, 16))), 0)
        z_a = EncodedFeatures(Tensor(np.random.default_rng(2).normal(size=(2, 10, 16))))
        z_b = EncodedFeatures(Tensor(np.random.default_rng(3).normal(size=(2, 10, 16))))
        out_a = dec(z_a, v0).v.value
        out_b = dec(z_b, v0).v.value
        np.testing.assert_allclose(out_a, out_b, atol=1e-12)

    def test_pass_embedding_distinguishes_identical_features(self):
        cfg = tiny_cfg(n_playbacks=2)
        dec = PlaybackDecoder(np.random.default_rng(4), cfg)
        z = EncodedFeatures(Tensor(np.random.default_rng(5).normal(size=(1, 10, 16))))
        v0 = DecoderLatent(Tensor(np.random.default_rng(6).normal(size=(1, 4, 16))), 0)
        out_pass1 = dec(z, v0).v.value
        out_pass2 = dec(z, DecoderLatent(v0.v, 1)).v.value
        assert np.abs(out_pass1 - out_pass2).max() > 1e-6

    def test_pass_table_exhaustion_is_config_error(self):
        cfg = tiny_cfg(n_playbacks=0)
        dec = PlaybackDecoder(np.random.default_rng(7), cfg)
        z = EncodedFeatures(Tensor(np.zeros((1, 10, 16))))
        v = DecoderLatent(Tensor(np.zeros((1, 4, 16))), 1)
        with pytest.raises(ConfigError, match="embedding table"):
            dec(z, v)

    def test_gradcheck_through_decode(self):
        cfg = tiny_cfg(channels=8, heads=2, latent_tokens=3)
        dec = PlaybackDecoder(np.random.default_rng(8), cfg)
        params = dict(dec.named_parameters())
        params["z"] = Tensor(np.random.default_rng(9).normal(size=(1, 10, 8)),
                             requires_grad=True)
        params["v"] = Tensor(np.random.default_rng(10).normal(size=(1, 3, 8)),
                             requires_grad=True)

        def probe():
            out = dec(EncodedFeatures(params["z"]), DecoderLatent(params["v"], 0))
            return ad.mean(ad.mul(out.v, out.v))
        res = grad_check(probe, params, max_coords_per_param=8)
        assert res.max_rel_err < 1e-4

    def test_latent_depends_on_every_earlier_playback(self):
        cfg = tiny_cfg(n_playbacks=2)
        dec = PlaybackDecoder(np.random.default_rng(11), cfg)
        rng = np.random.default_rng(12)
        z1 = Tensor(rng.normal(size=(1, 10, 16)))
        z2 = Tensor(rng.normal(size=(1, 10, 16)))
        z3 = Tensor(rng.normal(size=(1, 10, 16)))
        v0 = DecoderLatent(Tensor(rng.normal(size=(1, 4, 16))), 0)

        def roll(first):
            v = dec(EncodedFeatures(first), v0)
            v = dec(EncodedFeatures(z2), v)
            return dec(EncodedFeatures(z3), v).v.value

        baseline = roll(z1)
        zeroed = roll(Tensor(np.zeros((1, 10, 16))))
        assert np.abs(baseline - zeroed).max() > 1e-8


class TestClassify:
    def test_zero_head_gives_uniform_softmax(self):
        cfg = tiny_cfg()
        model = PlaybackModel(cfg, seed=0)
        model.head.w.value[:] = 0.0
        latent = DecoderLatent(Tensor(np.random.default_rng(13).normal(size=(2, 4, 16))), 1)
        logits = model.classify(latent)
        np.testing.assert_array_equal(logits.value, 0.0)
        probs = model.probabilities(logits).value
        np.testing.assert_allclose(probs, 1.0 / cfg.n_classes)

    def test_latent_token_permutation_invariance(self):
        cfg = tiny_cfg()
        model = PlaybackModel(cfg, seed=1)
        v = np.random.default_rng(14).normal(size=(1, 4, 16))
        a = model.classify(DecoderLatent(Tensor(v), 1)).value
        b = model.classify(DecoderLatent(Tensor(v[:, ::-1, :].copy()), 1)).value
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_linearity_zero_bias(self):
        cfg = tiny_cfg()
        model = PlaybackModel(cfg, seed=2)
        v = np.random.default_rng(15).normal(size=(1, 4, 16))
        one = model.classify(DecoderLatent(Tensor(v), 1)).value
        two = model.classify(DecoderLatent(Tensor(2.0 * v), 1)).value
        np.testing.assert_allclose(two, 2.0 * one, atol=1e-12)


class TestForwardAllPasses:
    def test_zero_playbacks_single_pass_no_selection(self):
        cfg = tiny_cfg(n_playbacks=0)
        model = PlaybackModel(cfg, seed=3)
        traces = model.forward_all_passes(make_clip())
        assert len(traces) == 1
        assert traces[0].saliency is None and traces[0].segments is None

    def test_three_playbacks_hop_schedule(self):
        cfg = tiny_cfg(n_playbacks=3)
        model = PlaybackModel(cfg, seed=4)
        traces = model.forward_all_passes(make_clip())
        assert [t.hop_ms for t in traces] == [10.0, 9.0, 8.0, 7.0]
        assert [t.pass_index for t in traces] == [1, 2, 3, 4]

    def test_all_passes_share_frame_count(self):
        cfg = tiny_cfg(n_playbacks=3)
        model = PlaybackModel(cfg, seed=5)
        traces = model.forward_all_passes(make_clip())
        frames = {t.spec.values.shape for t in traces}
        assert frames == {(32, cfg.input_frames)}

    def test_intermediate_passes_carry_selections(self):
        cfg = tiny_cfg(n_playbacks=2)
        model = PlaybackModel(cfg, seed=6)
        traces = model.forward_all_passes(make_clip())
        assert traces[0].segments is not None and traces[1].segments is not None
        assert traces[2].segments is None

    def test_deterministic_in_eval_mode(self):
        cfg = tiny_cfg(n_playbacks=2)
        model = PlaybackModel(cfg, seed=7)
        a = model.forward_all_passes(make_clip())
        b = model.forward_all_passes(make_clip())
        for ta, tb in zip(a, b):
            np.testing.assert_array_equal(ta.logits, tb.logits)


class TestInfer:
    def test_single_pass_equals_its_probabilities(self):
        cfg = tiny_cfg(n_playbacks=0)
        model = PlaybackModel(cfg, seed=8)
        clip = make_clip()
        probs = model.infer(clip)
        traces = model.forward_all_passes(clip)
        e = np.exp(traces[0].logits - traces[0].logits.max())
        np.testing.assert_allclose(probs, e / e.sum(), atol=1e-12)

    def test_inference_is_arithmetic_mean_of_pass_probabilities(self):
        cfg = tiny_cfg(n_playbacks=2)
        model = PlaybackModel(cfg, seed=9)
        clip = make_clip()
        probs = model.infer(clip)
        traces = model.forward_all_passes(clip)
        per_pass = []
        for t in traces:
            e = np.exp(t.logits - t.logits.max())
            per_pass.append(e / e.sum())
        np.testing.assert_allclose(probs, np.mean(per_pass, axis=0), atol=1e-12)
        assert probs.sum() == pytest.approx(1.0, abs=1e-10)

    def test_hand_built_average(self):
        np.testing.assert_allclose(
            np.mean([np.array([0.2, 0.8]), np.array([0.6, 0.4])], axis=0),
            [0.4, 0.6])
