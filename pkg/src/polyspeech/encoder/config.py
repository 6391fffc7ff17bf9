"""Shape configuration for the speech encoder stack."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from ..errors import ConfigError


def reduced_length(n: int, num_conv_layers: int = 2, stride: int = 2) -> int:
    """Sequence length after the strided conv frontend (ceil division per layer)."""
    for _ in range(num_conv_layers):
        n = math.ceil(n / stride)
    return n


@dataclass(frozen=True)
class EncoderConfig:
    """Dimensions of the frontend, context network and quantizer.

    The frontend is two 3x3 convolutions with stride (2, 2) each, so time
    and feature axes shrink 4x. The context network is a stack of
    conformer blocks over ``model_dim``; its output is projected to
    ``projection_dim``, the space shared with the quantized targets.
    """

    input_dim: int = 16
    conv_channels: tuple = (8, 4)
    model_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    conv_kernel_size: int = 7
    projection_dim: int = 32
    quantizer_groups: int = 2
    quantizer_entries: int = 32
    dropout: float = 0.1
    layerdrop: float = 0.0
    max_positions: int = 1024

    def __post_init__(self):
        if len(self.conv_channels) != 2:
            raise ConfigError("conv_channels must name exactly two layers")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("dropout", "layerdrop"):
                if not 0.0 <= v < 1.0:
                    raise ConfigError(f"{f.name} must be in [0, 1), got {v}")
            elif f.name == "conv_channels":
                if any(int(c) <= 0 for c in v):
                    raise ConfigError(f"conv_channels must be positive, got {v}")
            elif int(v) <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.projection_dim % self.quantizer_groups != 0:
            raise ConfigError(
                f"projection_dim {self.projection_dim} not divisible by "
                f"quantizer_groups {self.quantizer_groups}"
            )
        if self.conv_kernel_size % 2 != 1:
            raise ConfigError(
                f"conv_kernel_size must be odd for same-length output, "
                f"got {self.conv_kernel_size}"
            )

    @property
    def reduced_feature_dim(self) -> int:
        return reduced_length(self.input_dim)

    @property
    def frontend_out_dim(self) -> int:
        return self.conv_channels[1] * self.reduced_feature_dim

    @property
    def entry_dim(self) -> int:
        return self.projection_dim // self.quantizer_groups

    def output_length(self, input_length: int) -> int:
        return reduced_length(input_length)
