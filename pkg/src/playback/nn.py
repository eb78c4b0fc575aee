"""Parameter containers and the layers shared by the encoder, selector and decoder.

Modules hold their parameters as Tensor attributes; named_parameters walks
the attribute tree in insertion order, which fixes both checkpoint layout
and optimizer update order.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class Module:
    """Base class providing deterministic parameter discovery."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, attr in vars(self).items():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(attr, Tensor):
                yield name, attr
            elif isinstance(attr, Module):
                yield from attr.named_parameters(name)
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ShapeError(f"parameter names do not match: missing={missing}, extra={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {p.value.shape}")
            p.value = arr.copy()
            p.grad = None


def _init_weight(rng: np.random.Generator, n_in: int, n_out: int) -> Tensor:
    scale = 1.0 / math.sqrt(n_in)
    return Tensor(rng.normal(0.0, scale, size=(n_in, n_out)), requires_grad=True)


def _init_table(rng: np.random.Generator, shape: tuple[int, ...], scale: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.w = _init_weight(rng, n_in, n_out)
        if bias:
            self.b = Tensor(np.zeros(n_out), requires_grad=True)
        self._bias = bias

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.w)
        return ad.add(out, self.b) if self._bias else out


class LayerNorm(Module):
    """Layer normalization over the last axis with learned scale and shift."""

    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x), self.gamma), self.beta)


class Mlp(Module):
    def __init__(self, rng, dim: int, hidden: int, out_dim: int | None = None,
                 activation: str = "relu"):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, out_dim if out_dim is not None else dim)
        self._act = ad.gelu if activation == "gelu" else ad.relu

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self._act(self.fc1(x)))


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, heads: int,
                         record: list | None = None) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    q_in: (..., Tq, C); k_in, v_in: (..., Tk, C). Row softmax over Tk.
    When record is given, the attention weights array is appended to it.
    """
    *lead, tq, c = q_in.shape
    tk = k_in.shape[-2]
    if c % heads != 0:
        raise ShapeError(f"attention: width {c} not divisible by {heads} heads")
    dh = c // heads
    lead = tuple(lead)

    def split(x: Tensor, t: int) -> Tensor:
        x = ad.reshape(x, lead + (t, heads, dh))
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return ad.transpose(x, axes)  # (..., heads, t, dh)

    qh, kh, vh = split(q_in, tq), split(k_in, tk), split(v_in, tk)
    qh = ad.mul(qh, 1.0 / math.sqrt(dh))  # scale before the larger score matrix
    scores = ad.matmul(qh, ad.transpose(kh, _swap_last(kh.ndim)))
    attn = ad.softmax(scores, axis=-1)
    if record is not None:
        record.append(attn.value)
    out = ad.matmul(attn, vh)  # (..., heads, Tq, dh)
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    out = ad.transpose(out, axes)  # (..., Tq, heads, dh)
    return ad.reshape(out, lead + (tq, c))


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class Attention(Module):
    """Multi-head attention with learned q/k/v/out projections."""

    def __init__(self, rng, dim: int, heads: int):
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)
        self._heads = heads

    def __call__(self, q_src: Tensor, kv_src: Tensor | None = None,
                 record: list | None = None) -> Tensor:
        kv = q_src if kv_src is None else kv_src
        out = multi_head_attention(self.wq(q_src), self.wk(kv), self.wv(kv),
                                   self._heads, record)
        return self.wo(out)


class GruCell(Module):
    """Gated recurrent unit over the last axis.

    r = sigmoid(x Wr + h Ur + br), u = sigmoid(x Wu + h Uu + bu),
    n = tanh(x Wn + r * (h Un) + bn), h' = (1 - u) * n + u * h.
    """

    def __init__(self, rng, dim: int):
        self.wr = _init_weight(rng, dim, dim)
        self.ur = _init_weight(rng, dim, dim)
        self.br = Tensor(np.zeros(dim), requires_grad=True)
        self.wu = _init_weight(rng, dim, dim)
        self.uu = _init_weight(rng, dim, dim)
        self.bu = Tensor(np.zeros(dim), requires_grad=True)
        self.wn = _init_weight(rng, dim, dim)
        self.un = _init_weight(rng, dim, dim)
        self.bn = Tensor(np.zeros(dim), requires_grad=True)
        self._dim = dim

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self._dim or h.shape[-1] != self._dim:
            raise ShapeError(
                f"gru_cell: expected width {self._dim}, got x {x.shape} and h {h.shape}")
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.wr), ad.matmul(h, self.ur)), self.br))
        u = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.wu), ad.matmul(h, self.uu)), self.bu))
        n = ad.tanh(ad.add(ad.add(ad.matmul(x, self.wn), ad.mul(r, ad.matmul(h, self.un))), self.bn))
        return ad.add(ad.mul(ad.sub(1.0, u), n), ad.mul(u, h))


def gru_cell(x: Tensor, h: Tensor, cell: GruCell) -> Tensor:
    return cell(x, h)
