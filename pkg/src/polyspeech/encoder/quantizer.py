"""Gumbel-softmax vector quantizer for target construction.

Frames are quantized group-wise: logits [G, V] per frame, one codeword
sampled per group with a straight-through gumbel softmax, and the chosen
entries (each projection_dim / G wide) concatenated into the target
vector. The soft (noise-free) assignment probabilities are also
returned; the diversity objective consumes their batch average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..initializers import Initializer
from ..numerics import Tensor, gumbel_softmax, matmul, softmax
from .config import EncoderConfig


@dataclass
class QuantizerOutput:
    quantized: Tensor  # [B, T, projection_dim]
    soft_probs: Tensor  # [B, T, G, V], softmax of raw logits (no noise)
    codes: np.ndarray  # [B, T, G] int codeword indices actually selected


class GumbelQuantizer:
    def __init__(self, cfg: EncoderConfig, init: Initializer, prefix: str = "quantizer"):
        self.groups = cfg.quantizer_groups
        self.entries = cfg.quantizer_entries
        self.entry_dim = cfg.entry_dim
        self.logit_w = init.linear(f"{prefix}.logit.w", cfg.model_dim, self.groups * self.entries)
        self.logit_b = init.zeros(f"{prefix}.logit.b", (self.groups * self.entries,))
        self.codebook = init.normal(
            f"{prefix}.codebook", (self.groups, self.entries, self.entry_dim), 1.0
        )

    def __call__(
        self,
        z: Tensor,
        temperature: float,
        rng: np.random.Generator | None,
        hard: bool = True,
    ) -> QuantizerOutput:
        """Quantize frames z [B, T, model_dim]; see module docstring."""
        if z.ndim != 3:
            raise ContractError(f"expected [B, T, D] input, got shape {z.shape}")
        B, T, _ = z.shape
        logits = (matmul(z, self.logit_w) + self.logit_b).reshape(
            (B, T, self.groups, self.entries)
        )
        soft_probs = softmax(logits)
        if rng is None:
            raise ContractError("quantization samples noise and needs an rng")
        sel = gumbel_softmax(logits, temperature, rng, hard=hard)  # [B, T, G, V]
        codes = sel.data.argmax(axis=-1)
        # [B, T, G, 1, V] @ [G, V, e] -> [B, T, G, 1, e]
        picked = matmul(sel.reshape((B, T, self.groups, 1, self.entries)), self.codebook)
        quantized = picked.reshape((B, T, self.groups * self.entry_dim))
        return QuantizerOutput(quantized=quantized, soft_probs=soft_probs, codes=codes)


def temperature_at(step: int, start: float = 2.0, floor: float = 0.5, decay: float = 0.9995) -> float:
    """Geometric anneal of the sampling temperature, clipped at a floor."""
    if step < 0:
        raise ContractError(f"step must be non-negative, got {step}")
    return max(floor, start * decay**step)
