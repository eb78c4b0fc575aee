"""Finite-difference verification suite for every differentiable component.

Each check builds a deterministic scalar probe around one primitive or block
and compares reverse-mode gradients against central differences. Primitives
must agree to 1e-5 relative error, composite blocks and the tiny end-to-end
model to 1e-4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .audio import AudioClip
from .autodiff import Tensor, grad_check
from .config import ModelConfig
from .decoder import PlaybackModel
from .losses import LossConfig, one_hot, rank_loss, total_loss
from .slots import SlotAttention

PRIMITIVE_TOL = 1e-5
BLOCK_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _params(rng, **shapes) -> dict[str, Tensor]:
    return {name: Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)
            for name, shape in shapes.items()}


def _probe(out: Tensor) -> Tensor:
    """Collapse any tensor to a smooth scalar with non-trivial curvature."""
    return ad.mean(ad.mul(out, out)) if out.size > 1 else out


def primitive_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def run(name, build, shapes, tol=PRIMITIVE_TOL):
        params = _params(rng, **shapes)
        res = grad_check(lambda: _probe(build(params)), params)
        results.append(CheckResult(name, res.max_rel_err, tol))

    run("matmul", lambda p: ad.matmul(p["a"], p["b"]), {"a": (4, 5), "b": (5, 3)})
    run("matmul_batched", lambda p: ad.matmul(p["a"], p["b"]),
        {"a": (2, 3, 4), "b": (2, 4, 3)})
    run("add", lambda p: ad.add(p["a"], p["b"]), {"a": (3, 4), "b": (4,)})
    run("mul", lambda p: ad.mul(p["a"], p["b"]), {"a": (3, 4), "b": (3, 1)})
    run("div", lambda p: ad.div(p["a"], ad.add(ad.mul(p["b"], p["b"]), 1.0)),
        {"a": (3, 3), "b": (3, 3)})
    run("concat", lambda p: ad.concat([p["a"], p["b"]], axis=1),
        {"a": (2, 3), "b": (2, 4)})
    run("slice", lambda p: p["a"][:, 1:3], {"a": (3, 5)})
    run("mean", lambda p: ad.mean(p["a"], axis=1), {"a": (3, 6)})
    run("sum", lambda p: ad.tensor_sum(p["a"], axis=0), {"a": (4, 3)})
    run("relu", lambda p: ad.relu(p["a"]), {"a": (4, 4)})
    run("max_with_zero", lambda p: ad.max_with_zero(p["a"]), {"a": (5,) * 2})
    run("gelu", lambda p: ad.gelu(p["a"]), {"a": (4, 4)})
    run("sigmoid", lambda p: ad.sigmoid(p["a"]), {"a": (4, 4)})
    run("tanh", lambda p: ad.tanh(p["a"]), {"a": (4, 4)})
    run("exp", lambda p: ad.exp(p["a"]), {"a": (4, 4)})
    run("log", lambda p: ad.log(ad.add(ad.mul(p["a"], p["a"]), 0.5)), {"a": (4, 4)})
    run("softplus", lambda p: ad.softplus(p["a"]), {"a": (4, 4)})
    run("softmax", lambda p: ad.softmax(p["a"], axis=-1), {"a": (3, 5)})
    run("softmax_axis0", lambda p: ad.softmax(p["a"], axis=0), {"a": (5, 3)})
    # sum of squares of a normalized row is ~constant, so weight the output
    # to give layer_norm a non-degenerate probe
    ln_weights = Tensor(np.random.default_rng(seed + 7).normal(size=(3, 6)))
    run("layer_norm", lambda p: ad.mul(ad.layer_norm(p["a"]), ln_weights), {"a": (3, 6)})
    run("reshape", lambda p: ad.reshape(p["a"], (2, 6)), {"a": (3, 4)})
    run("transpose", lambda p: ad.transpose(p["a"], (1, 0, 2)), {"a": (2, 3, 4)})
    run("abs", lambda p: ad.absolute(p["a"]), {"a": (4, 4)})
    run("clamp_min", lambda p: ad.clamp_min(p["a"], -0.3), {"a": (4, 4)})
    run("diagonal", lambda p: ad.diagonal(p["a"]), {"a": (2, 4, 4)})
    run("linear_interp_1d", lambda p: ad.linear_interp_1d(p["a"], 7), {"a": (3, 5)})
    return results


def block_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    # GRU cell
    cell = nn.GruCell(np.random.default_rng(seed + 1), 6)
    gru_params = dict(cell.named_parameters())
    gru_params.update(_params(rng, x=(3, 6), h=(3, 6)))
    res = grad_check(lambda: _probe(cell(gru_params["x"], gru_params["h"])), gru_params)
    results.append(CheckResult("gru_cell", res.max_rel_err, PRIMITIVE_TOL))

    # one slot-attention iteration
    slot = SlotAttention(np.random.default_rng(seed + 2), in_dim=8, d_slot=6, hidden=6)
    slot_params = dict(slot.named_parameters())
    slot_params.update(_params(rng, z=(2, 5, 8), s=(2, 2, 6)))
    from .slots import SlotState

    def slot_probe():
        state = slot.iterate(slot_params["z"], SlotState(slot_params["s"]), 1)
        return _probe(state.slots)
    res = grad_check(slot_probe, slot_params)
    results.append(CheckResult("slot_iteration", res.max_rel_err, BLOCK_TOL))

    # one decoder pass (cross-attention + self-attention + MLP)
    cfg = _tiny_config()
    from .decoder import DecoderLatent, PlaybackDecoder
    from .encoder import EncodedFeatures
    dec = PlaybackDecoder(np.random.default_rng(seed + 3), cfg)
    dec_params = dict(dec.named_parameters())
    dec_params.update(_params(rng, z=(2, cfg.grid[1], cfg.channels),
                              v=(2, cfg.latent_tokens, cfg.channels)))

    def dec_probe():
        out = dec(EncodedFeatures(dec_params["z"]), DecoderLatent(dec_params["v"], 0))
        return _probe(out.v)
    res = grad_check(dec_probe, dec_params)
    results.append(CheckResult("decode", res.max_rel_err, BLOCK_TOL))

    # ranking loss
    p_rng = np.random.default_rng(seed + 4)
    probs = {f"p{i}": Tensor(p_rng.uniform(0.05, 0.95, size=()), requires_grad=True)
             for i in range(4)}

    def rank_probe():
        return rank_loss([probs[f"p{i}"] for i in range(4)], 4, 0.05)
    res = grad_check(rank_probe, probs)
    results.append(CheckResult("rank_loss", res.max_rel_err, PRIMITIVE_TOL))
    return results


def _tiny_config() -> ModelConfig:
    return ModelConfig(n_mels=32, patch_f=16, patch_t=10, clip_seconds=1.0,
                       n_playbacks=1, channels=16, depth=2, heads=2,
                       latent_tokens=4, d_slot=8, slot_iters=2, slot_hidden=8,
                       n_classes=3)


def end_to_end_check(seed: int = 0, max_coords: int = 3) -> CheckResult:
    """Gradient of the full multi-pass loss on a 1 s clip, tiny configuration.

    Runs in eval mode so the probe is deterministic; the hard segment
    thresholding passes no gradient, so slot-branch parameters legitimately
    check out at zero against zero.
    """
    cfg = _tiny_config()
    rng = np.random.default_rng(seed)
    wav = 0.3 * np.sin(2 * np.pi * 800 * np.arange(16000) / 16000.0)
    wav[4000:6000] += 0.4 * np.sin(2 * np.pi * 2000 * np.arange(2000) / 16000.0)
    wav += 0.02 * rng.standard_normal(16000)
    clip = AudioClip(np.clip(wav, -1, 1), 16000)

    model = PlaybackModel(cfg, seed=seed + 1)
    params = dict(model.named_parameters())
    targets = one_hot(np.array([1]), cfg.n_classes)
    loss_cfg = LossConfig(0.05, 0.7, cfg.n_playbacks, cfg.label_mode)

    def probe():
        out = model.forward_batch([clip], train=False)
        return total_loss(out.logits_per_pass, targets, loss_cfg)

    res = grad_check(probe, params, max_coords_per_param=max_coords, seed=seed)
    return CheckResult("end_to_end", res.max_rel_err, BLOCK_TOL)


def full_suite(seed: int = 0) -> list[CheckResult]:
    return primitive_checks(seed) + block_checks(seed) + [end_to_end_check(seed)]


def randomized_primitive_sweep(trials: int = 100, seed: int = 0) -> float:
    """Max relative error of every primitive over randomized small shapes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    unary = [ad.relu, ad.gelu, ad.sigmoid, ad.tanh, ad.exp,
             ad.softplus, ad.absolute, lambda t: ad.softmax(t, axis=-1),
             ad.layer_norm, lambda t: ad.clamp_min(t, 0.1),
             lambda t: ad.log(ad.add(ad.mul(t, t), 0.5))]
    for _ in range(trials):
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(2, 6))
        n_out = int(rng.integers(1, 7))
        op = unary[int(rng.integers(0, len(unary)))] if rng.random() < 0.9 else (
            lambda t: ad.linear_interp_1d(t, n_out))
        params = {"x": Tensor(rng.normal(0, 1, size=(rows, cols)), requires_grad=True)}
        weights = Tensor(rng.normal(0, 1, size=op(params["x"]).shape))
        res = grad_check(lambda: ad.mean(ad.mul(op(params["x"]), weights)), params)
        worst = max(worst, res.max_rel_err)

        a = Tensor(rng.normal(0, 1, size=(rows, cols)), requires_grad=True)
        b = Tensor(rng.normal(0, 1, size=(cols, rows)), requires_grad=True)
        pair = {"a": a, "b": b}
        res = grad_check(lambda: _probe(ad.matmul(pair["a"], pair["b"])), pair)
        worst = max(worst, res.max_rel_err)
    return worst
