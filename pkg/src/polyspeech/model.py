"""Variant assembly: one encoder, five ways to handle language identity.

  xlsr   the plain contrastive baseline
  la     xlsr + frame-level language discriminator behind gradient
         reversal at a chosen tap
  le     xlsr + language embedding added into the context stream, with
         an orthogonality penalty on the table
  lsa    xlsr + per-language residual adapters at the context input
  lsaw   xlsr + per-language low-rank reweighting of the frontend
         projection and of an extra (identity-initialized) square map at
         the context input

Parameters are drawn per-name from the run seed, so every variant shares
bit-identical backbone weights with the baseline; la/le add their heads
on top, and lsa/lsaw start as exact no-ops (criterion: a fresh variant
forward equals the fresh baseline forward).

The quantized targets are built from the frontend output before any
additive conditioning: conditioning steers the context network, not the
targets it must predict.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import MaskingConfig
from .encoder import (
    ConformerStack,
    EncoderConfig,
    FeatureEncoder,
    GumbelQuantizer,
    apply_time_mask,
    reduced_length,
)
from .errors import ConfigError, ContractError
from .initializers import Initializer, ShapeRecorder
from .langcond import (
    AdapterBlock,
    AdaptiveLinear,
    LanguageDiscriminator,
    LanguageEmbeddingTable,
)
from .numerics import Tensor, matmul, no_grad
from .objectives import (
    contrastive_loss,
    cross_entropy,
    diversity_loss,
    gradient_reversal,
    orthogonality_loss,
)

VARIANTS = ("xlsr", "la", "le", "lsa", "lsaw")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    variant: str = "xlsr"
    num_languages: int = 4
    tap_layer: int = 2  # la: discriminator tap (block index)
    disc_hidden: int = 512
    le_layer: int = 0  # le: embedding insertion point (0 = context input)
    adapter_bottleneck: int = 256
    k_scale: int = 8
    k_bias: int = 8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.num_languages < 1:
            raise ConfigError(f"num_languages must be >= 1, got {self.num_languages}")
        if self.variant == "la" and not 0 <= self.tap_layer <= self.encoder.num_blocks:
            raise ConfigError(
                f"tap_layer {self.tap_layer} outside 0..{self.encoder.num_blocks}"
            )
        if self.variant == "le" and not 0 <= self.le_layer <= self.encoder.num_blocks:
            raise ConfigError(
                f"le_layer {self.le_layer} outside 0..{self.encoder.num_blocks}"
            )
        for f in ("disc_hidden", "adapter_bottleneck", "k_scale", "k_bias"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1, got {getattr(self, f)}")


@dataclass(frozen=True)
class LossSettings:
    num_distractors: int = 10
    contrastive_temperature: float = 0.1
    beta_diversity: float = 0.1
    lambda_adv: float = 0.01
    alpha_ortho: float = 10.0
    masking: MaskingConfig = field(default_factory=MaskingConfig)

    def __post_init__(self):
        if self.num_distractors < 1:
            raise ConfigError(f"num_distractors must be >= 1, got {self.num_distractors}")
        if self.contrastive_temperature <= 0:
            raise ConfigError("contrastive_temperature must be positive")


@dataclass
class EncodeResult:
    context: Tensor  # [B, T', projection_dim]
    taps: list  # context-stack activations, length num_blocks + 1
    frontend_out: Tensor  # [B, T', model_dim], pre-conditioning


class Model:
    def __init__(self, cfg: ModelConfig, seed: int, init: Initializer | None = None):
        self.cfg = cfg
        self.seed = seed
        init = init if init is not None else Initializer(seed)
        self.init = init
        enc = cfg.encoder
        self.frontend = FeatureEncoder(enc, init)
        self.mask_emb = init.normal("mask_emb", (enc.model_dim,), 0.1)
        self.stack = ConformerStack(enc, init)
        self.quantizer = GumbelQuantizer(enc, init)

        self.embedding_table = None
        self.discriminator = None
        self.adapter = None
        self.adapt_in = None
        self.adapt_mid = None
        if cfg.variant == "le":
            self.embedding_table = LanguageEmbeddingTable(
                cfg.num_languages, enc.model_dim, init
            )
        elif cfg.variant == "la":
            self.discriminator = LanguageDiscriminator(
                enc.model_dim, cfg.disc_hidden, cfg.num_languages, init
            )
        elif cfg.variant == "lsa":
            self.adapter = AdapterBlock(
                cfg.num_languages, enc.model_dim, cfg.adapter_bottleneck, init
            )
        elif cfg.variant == "lsaw":
            self.adapt_in = AdaptiveLinear(
                cfg.num_languages, self.frontend.proj_w, cfg.k_scale, cfg.k_bias,
                init, "langcond.adapt_in", bias=self.frontend.proj_b,
            )
            mid_base = init.constant(
                "langcond.adapt_mid.base", np.eye(enc.model_dim)
            )
            self.adapt_mid = AdaptiveLinear(
                cfg.num_languages, mid_base, cfg.k_scale, cfg.k_bias,
                init, "langcond.adapt_mid",
            )

    # -- parameter access ---------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        return self.init.params

    def param_list(self) -> list[Tensor]:
        return [self.init.params[k] for k in sorted(self.init.params)]

    def num_params(self) -> int:
        return sum(p.size for p in self.init.params.values())

    # -- forward ------------------------------------------------------------

    def encode(
        self,
        features: np.ndarray,
        lang_ids: np.ndarray,
        mask: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> EncodeResult:
        """features: [B, T, F] raw frames; mask: bool [B, T'] or None."""
        cfg = self.cfg
        x = Tensor(np.asarray(features, dtype=np.float64))
        conv = self.frontend.conv_features(x)
        if cfg.variant == "lsaw":
            z = self.adapt_in(conv, lang_ids)
        else:
            z = matmul(conv, self.frontend.proj_w) + self.frontend.proj_b
        frontend_out = z

        h = z
        mods = None
        if cfg.variant == "le":
            if cfg.le_layer == 0:
                h = self.embedding_table(h, lang_ids)
            else:
                mods = {cfg.le_layer: lambda t: self.embedding_table(t, lang_ids)}
        elif cfg.variant == "lsa":
            h = self.adapter(h, lang_ids)
        elif cfg.variant == "lsaw":
            h = self.adapt_mid(h, lang_ids)

        if mask is not None:
            expected = (x.shape[0], reduced_length(x.shape[1]))
            if mask.shape != expected:
                raise ContractError(
                    f"mask shape {mask.shape} != reduced frames {expected}"
                )
            h = apply_time_mask(h, mask, self.mask_emb)
        context, taps = self.stack(h, rng=rng, training=training, mods=mods)
        return EncodeResult(context=context, taps=taps, frontend_out=frontend_out)

    def pretrain_loss(
        self,
        features: np.ndarray,
        lang_ids: np.ndarray,
        mask: np.ndarray,
        settings: LossSettings,
        gumbel_temperature: float,
        rng: np.random.Generator,
        training: bool = True,
        smooth: bool = False,
    ) -> tuple[Tensor, dict]:
        """One full objective evaluation. Returns (total, metrics dict).

        All stochastic choices (dropout, layerdrop, gumbel noise,
        distractor draws) come from ``rng``, so a step is reproducible
        from its seed.

        ``smooth`` swaps the two defined-gradient conventions for their
        smooth counterparts: codeword selection stays soft instead of
        straight-through hard, and the adversarial branch skips the
        sign-flipping wrapper. Finite differences can then certify the
        whole graph; the two conventions have their own exactness
        checks. Training never sets this.
        """
        cfg = self.cfg
        enc = self.encode(features, lang_ids, mask=mask, rng=rng, training=training)
        quant = self.quantizer(enc.frontend_out, gumbel_temperature, rng, hard=not smooth)

        l_contrastive, retrieval_acc = contrastive_loss(
            enc.context,
            quant.quantized,
            mask,
            settings.num_distractors,
            settings.contrastive_temperature,
            rng,
        )
        masked_probs = quant.soft_probs[mask]  # [N, G, V]
        l_diversity = diversity_loss(masked_probs)
        total = l_contrastive + l_diversity * settings.beta_diversity
        metrics = {
            "loss_contrastive": float(l_contrastive.data),
            "loss_diversity": float(l_diversity.data),
            "retrieval_accuracy": retrieval_acc,
            "codebook_perplexity": codebook_perplexity(masked_probs.data),
        }

        if cfg.variant == "la":
            tapped = enc.taps[cfg.tap_layer]
            if not smooth:
                tapped = gradient_reversal(tapped)
            logits = self.discriminator(tapped)
            B, T = mask.shape
            labels = np.repeat(np.asarray(lang_ids), T)
            l_adv, disc_acc = cross_entropy(
                logits.reshape((B * T, cfg.num_languages)), labels
            )
            total = total + l_adv * settings.lambda_adv
            metrics["loss_adversarial"] = float(l_adv.data)
            metrics["discriminator_accuracy"] = disc_acc
        elif cfg.variant == "le":
            l_ortho = orthogonality_loss(self.embedding_table.table)
            total = total + l_ortho * settings.alpha_ortho
            metrics["loss_orthogonality"] = float(l_ortho.data)

        metrics["loss_total"] = float(total.data)
        return total, metrics

    def tap_features(
        self, features: np.ndarray, lang_ids: np.ndarray, tap_layer: int
    ) -> np.ndarray:
        """Frozen eval-mode activations at a tap, as plain numpy [B, T', D]."""
        if not 0 <= tap_layer <= self.cfg.encoder.num_blocks:
            raise ContractError(
                f"tap_layer {tap_layer} outside 0..{self.cfg.encoder.num_blocks}"
            )
        with no_grad():
            enc = self.encode(features, lang_ids, mask=None, rng=None, training=False)
        return enc.taps[tap_layer].data


def codebook_perplexity(soft_probs: np.ndarray) -> float:
    """exp(entropy) of the averaged code distribution, averaged over groups.

    V means perfectly uniform usage; 1 means total collapse.
    """
    p = soft_probs.reshape(-1, soft_probs.shape[-2], soft_probs.shape[-1]).mean(axis=0)
    p = np.clip(p, 1e-12, None)
    h = -(p * np.log(p)).sum(axis=-1)
    return float(np.exp(h).mean())


def build_model(cfg: ModelConfig, seed: int) -> Model:
    return Model(cfg, seed)


def model_param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every parameter, without allocating any of them."""
    recorder = ShapeRecorder()
    Model(cfg, seed=0, init=recorder)  # constructors only touch shapes
    return dict(recorder.shapes)


def baseline_config(cfg: ModelConfig) -> ModelConfig:
    return replace(cfg, variant="xlsr")


def full_scale_config(variant: str = "xlsr") -> ModelConfig:
    """The large profile used only for parameter accounting."""
    enc = EncoderConfig(
        input_dim=40,
        conv_channels=(128, 32),
        model_dim=512,
        num_blocks=16,
        num_heads=8,
        ffn_dim=2048,
        conv_kernel_size=15,
        projection_dim=768,
        quantizer_groups=2,
        quantizer_entries=320,
        dropout=0.1,
        layerdrop=0.2,
        max_positions=1024,
    )
    return ModelConfig(
        encoder=enc,
        variant=variant,
        num_languages=16,
        tap_layer=4,
        disc_hidden=512,
        le_layer=0,
        adapter_bottleneck=256,
        k_scale=8,
        k_bias=8,
    )
