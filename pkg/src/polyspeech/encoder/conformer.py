"""Conformer context network.

Each block is the macaron sandwich: half-weighted feed-forward, self
attention, a depthwise-convolution module, a second half feed-forward,
then a closing layer norm. All sublayers are pre-norm residuals. The
stack adds a learned absolute positional embedding at the input and can
drop whole blocks stochastically during training (layerdrop).
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..initializers import Initializer
from ..numerics import (
    Tensor,
    custom_op,
    layer_norm,
    matmul,
    sigmoid,
    silu,
    softmax,
)
from .config import EncoderConfig


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * Tensor(keep)


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel conv along time. x: [B, T, D]; w: [D, k] (k odd); b: [D]."""
    B, T, D = x.data.shape
    Dw, k = w.data.shape
    if Dw != D:
        raise ContractError(f"channel mismatch: input {D}, kernel {Dw}")
    half = k // 2
    xp = np.pad(x.data, ((0, 0), (half, half), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # [B, T, D, k]
    out = (win * w.data).sum(axis=-1) + b.data

    def vjp(g):
        dw = (win * g[..., None]).sum(axis=(0, 1))
        db = g.sum(axis=(0, 1))
        dxp = np.zeros_like(xp)
        for i in range(k):
            dxp[:, i : i + T, :] += g * w.data[:, i]
        return dxp[:, half : half + T, :], dw, db

    return custom_op([x, w, b], out, vjp, "depthwise_conv1d")


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the last axis: first half * sigmoid(second half)."""
    d = x.shape[-1]
    if d % 2 != 0:
        raise ContractError(f"glu needs an even last dim, got {d}")
    a = x[..., : d // 2]
    g = x[..., d // 2 :]
    return a * sigmoid(g)


class _LayerNormParams:
    def __init__(self, init: Initializer, name: str, dim: int):
        self.gamma = init.ones(f"{name}.gamma", (dim,))
        self.beta = init.zeros(f"{name}.beta", (dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class FeedForward:
    def __init__(self, cfg: EncoderConfig, init: Initializer, name: str):
        d, f = cfg.model_dim, cfg.ffn_dim
        self.norm = _LayerNormParams(init, f"{name}.norm", d)
        self.w1 = init.linear(f"{name}.w1", d, f)
        self.b1 = init.zeros(f"{name}.b1", (f,))
        self.w2 = init.linear(f"{name}.w2", f, d)
        self.b2 = init.zeros(f"{name}.b2", (d,))
        self.p = cfg.dropout

    def __call__(self, x, rng, training):
        h = silu(matmul(self.norm(x), self.w1) + self.b1)
        h = dropout(h, self.p, rng, training)
        return dropout(matmul(h, self.w2) + self.b2, self.p, rng, training)


class MultiHeadSelfAttention:
    def __init__(self, cfg: EncoderConfig, init: Initializer, name: str):
        d = cfg.model_dim
        self.heads = cfg.num_heads
        self.head_dim = d // cfg.num_heads
        self.norm = _LayerNormParams(init, f"{name}.norm", d)
        self.wq = init.linear(f"{name}.wq", d, d)
        self.wk = init.linear(f"{name}.wk", d, d)
        self.wv = init.linear(f"{name}.wv", d, d)
        self.wo = init.linear(f"{name}.wo", d, d)
        self.bo = init.zeros(f"{name}.bo", (d,))
        self.p = cfg.dropout

    def _split(self, t: Tensor, B: int, T: int) -> Tensor:
        return t.reshape((B, T, self.heads, self.head_dim)).transpose((0, 2, 1, 3))

    def __call__(self, x, rng, training):
        B, T, d = x.shape
        h = self.norm(x)
        q = self._split(matmul(h, self.wq), B, T)
        k = self._split(matmul(h, self.wk), B, T)
        v = self._split(matmul(h, self.wv), B, T)
        scores = matmul(q, k.transpose((0, 1, 3, 2))) * (self.head_dim**-0.5)
        attn = dropout(softmax(scores), self.p, rng, training)
        ctx = matmul(attn, v).transpose((0, 2, 1, 3)).reshape((B, T, d))
        return dropout(matmul(ctx, self.wo) + self.bo, self.p, rng, training)


class ConvModule:
    def __init__(self, cfg: EncoderConfig, init: Initializer, name: str):
        d = cfg.model_dim
        self.norm = _LayerNormParams(init, f"{name}.norm", d)
        self.pw1 = init.linear(f"{name}.pw1", d, 2 * d)
        self.pb1 = init.zeros(f"{name}.pb1", (2 * d,))
        self.dw = init.normal(f"{name}.dw", (d, cfg.conv_kernel_size), cfg.conv_kernel_size**-0.5)
        self.db = init.zeros(f"{name}.db", (d,))
        self.mid_norm = _LayerNormParams(init, f"{name}.mid_norm", d)
        self.pw2 = init.linear(f"{name}.pw2", d, d)
        self.pb2 = init.zeros(f"{name}.pb2", (d,))
        self.p = cfg.dropout

    def __call__(self, x, rng, training):
        h = glu(matmul(self.norm(x), self.pw1) + self.pb1)
        h = silu(self.mid_norm(depthwise_conv1d(h, self.dw, self.db)))
        return dropout(matmul(h, self.pw2) + self.pb2, self.p, rng, training)


class ConformerBlock:
    def __init__(self, cfg: EncoderConfig, init: Initializer, name: str):
        self.ffn1 = FeedForward(cfg, init, f"{name}.ffn1")
        self.attn = MultiHeadSelfAttention(cfg, init, f"{name}.attn")
        self.conv = ConvModule(cfg, init, f"{name}.conv")
        self.ffn2 = FeedForward(cfg, init, f"{name}.ffn2")
        self.out_norm = _LayerNormParams(init, f"{name}.out_norm", cfg.model_dim)

    def __call__(self, x, rng, training):
        x = x + self.ffn1(x, rng, training) * 0.5
        x = x + self.attn(x, rng, training)
        x = x + self.conv(x, rng, training)
        x = x + self.ffn2(x, rng, training) * 0.5
        return self.out_norm(x)


class ConformerStack:
    """Positional embedding, N blocks, and a projection to the target space.

    forward() returns (projected, taps) where taps[0] is the block-stack
    input and taps[i] the output of block i. Downstream consumers
    (probes, the adversarial head) read taps by index.
    """

    def __init__(self, cfg: EncoderConfig, init: Initializer, prefix: str = "context"):
        self.cfg = cfg
        self.pos = init.normal(f"{prefix}.pos", (cfg.max_positions, cfg.model_dim), 0.02)
        self.blocks = [
            ConformerBlock(cfg, init, f"{prefix}.block{i}") for i in range(cfg.num_blocks)
        ]
        self.out_w = init.linear(f"{prefix}.out.w", cfg.model_dim, cfg.projection_dim)
        self.out_b = init.zeros(f"{prefix}.out.b", (cfg.projection_dim,))

    def __call__(
        self,
        x: Tensor,
        rng: np.random.Generator | None = None,
        training: bool = False,
        mods: dict | None = None,
    ) -> tuple[Tensor, list[Tensor]]:
        """Run the stack; ``mods`` maps a block index to a transform
        applied to that block's output (index i modifies the stream right
        after block i, i.e. what taps[i] records)."""
        B, T, d = x.shape
        if T > self.cfg.max_positions:
            raise ContractError(
                f"sequence length {T} exceeds max_positions {self.cfg.max_positions}"
            )
        if mods:
            bad = [i for i in mods if not 1 <= i <= len(self.blocks)]
            if bad:
                raise ContractError(
                    f"mod indices {bad} outside block range 1..{len(self.blocks)}"
                )
        h = x + self.pos[:T]
        h = dropout(h, self.cfg.dropout, rng, training)
        taps = [h]
        for i, block in enumerate(self.blocks, start=1):
            skip = False
            if training and self.cfg.layerdrop > 0.0:
                if rng is None:
                    raise ContractError("training-mode layerdrop needs an rng")
                skip = rng.random() < self.cfg.layerdrop
            if not skip:
                h = block(h, rng, training)
            if mods and i in mods:
                h = mods[i](h)
            taps.append(h)
        return matmul(h, self.out_w) + self.out_b, taps
