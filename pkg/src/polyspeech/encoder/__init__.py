"""Speech encoder: conv frontend, conformer stack, gumbel quantizer."""

from .config import EncoderConfig, reduced_length
from .conformer import ConformerBlock, ConformerStack, depthwise_conv1d, dropout, glu
from .features import FeatureEncoder, apply_time_mask, conv2d
from .quantizer import GumbelQuantizer, QuantizerOutput, temperature_at

__all__ = [
    "ConformerBlock",
    "ConformerStack",
    "EncoderConfig",
    "FeatureEncoder",
    "GumbelQuantizer",
    "QuantizerOutput",
    "apply_time_mask",
    "conv2d",
    "depthwise_conv1d",
    "dropout",
    "glu",
    "reduced_length",
    "temperature_at",
]
