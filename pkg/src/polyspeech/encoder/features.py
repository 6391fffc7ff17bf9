"""Convolutional frontend over time-frequency inputs.

Input is a batch of feature matrices [B, T, F]. Two strided 3x3
convolutions treat (T, F) as a 2-channel-free image, halving both axes
each time, and the surviving channels are flattened per frame and
projected to the context-network width. Padding follows the
ceil-division convention: output length is ceil(in / stride) on both
axes, so no frame count is ever rounded away to zero.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..initializers import Initializer
from ..numerics import Tensor, custom_op, matmul, silu
from .config import EncoderConfig


def _same_pad(n: int, stride: int, k: int) -> tuple[int, int]:
    out = -(-n // stride)  # ceil
    total = max((out - 1) * stride + k - n, 0)
    lo = total // 2
    return lo, total - lo


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int) -> Tensor:
    """Strided 2-D convolution with ceil-mode same padding.

    x: [B, C_in, H, W]; w: [C_out, C_in, kh, kw]; b: [C_out].
    Returns [B, C_out, ceil(H/stride), ceil(W/stride)].
    """
    B, cin, H, W = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ContractError(f"channel mismatch: input {cin}, weight {cin_w}")
    pt, pb = _same_pad(H, stride, kh)
    pl, pr = _same_pad(W, stride, kw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B, C_in, Ho, Wo, kh, kw]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho * Wo, cin * kh * kw)
    wm = w.data.reshape(cout, -1)
    out = (cols @ wm.T + b.data).reshape(B, Ho, Wo, cout).transpose(0, 3, 1, 2)

    def vjp(g):
        gc = g.transpose(0, 2, 3, 1).reshape(B, Ho * Wo, cout)
        dw = np.einsum("bnc,bnk->ck", gc, cols).reshape(w.data.shape)
        db = gc.sum(axis=(0, 1))
        dcols = (gc @ wm).reshape(B, Ho, Wo, cin, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + (Ho - 1) * stride + 1 : stride,
                    j : j + (Wo - 1) * stride + 1 : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pt : pt + H, pl : pl + W]
        return dx, dw, db

    return custom_op([x, w, b], np.ascontiguousarray(out), vjp, "conv2d")


class FeatureEncoder:
    """Two conv layers plus a per-frame linear map into the model width."""

    def __init__(self, cfg: EncoderConfig, init: Initializer, prefix: str = "frontend"):
        self.cfg = cfg
        c1, c2 = cfg.conv_channels
        k = 3
        self.w1 = init.normal(f"{prefix}.conv1.w", (c1, 1, k, k), (1 * k * k) ** -0.5)
        self.b1 = init.zeros(f"{prefix}.conv1.b", (c1,))
        self.w2 = init.normal(f"{prefix}.conv2.w", (c2, c1, k, k), (c1 * k * k) ** -0.5)
        self.b2 = init.zeros(f"{prefix}.conv2.b", (c2,))
        self.proj_w = init.linear(f"{prefix}.proj.w", cfg.frontend_out_dim, cfg.model_dim)
        self.proj_b = init.zeros(f"{prefix}.proj.b", (cfg.model_dim,))

    def conv_features(self, x: Tensor) -> Tensor:
        """[B, T, F] -> flattened conv channels [B, T', C2 * F'], pre-projection."""
        if x.ndim != 3:
            raise ContractError(f"expected [B, T, F] input, got shape {x.shape}")
        if x.shape[2] != self.cfg.input_dim:
            raise ContractError(
                f"feature dim {x.shape[2]} != configured input_dim {self.cfg.input_dim}"
            )
        B, T, F = x.shape
        h = x.reshape((B, 1, T, F))
        h = silu(conv2d(h, self.w1, self.b1, stride=2))
        h = silu(conv2d(h, self.w2, self.b2, stride=2))
        # [B, C2, T', F'] -> [B, T', C2*F']
        Bc, C2, Tp, Fp = h.shape
        return h.transpose((0, 2, 1, 3)).reshape((Bc, Tp, C2 * Fp))

    def __call__(self, x: Tensor) -> Tensor:
        """[B, T, F] -> [B, T', model_dim] with T' = ceil(T/4)."""
        return matmul(self.conv_features(x), self.proj_w) + self.proj_b


def apply_time_mask(z: Tensor, mask: np.ndarray, mask_embedding: Tensor) -> Tensor:
    """Replace masked frames of z [B, T', D] with a learned vector.

    ``mask`` is boolean [B, T']. Gradients flow to the surviving frames
    and to the embedding at masked positions.
    """
    if mask.shape != z.shape[:2]:
        raise ContractError(f"mask shape {mask.shape} != frames {z.shape[:2]}")
    m = Tensor(mask[:, :, None].astype(np.float64))
    keep = Tensor(1.0 - m.data)
    return z * keep + m * mask_embedding
