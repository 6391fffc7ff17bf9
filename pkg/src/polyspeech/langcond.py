"""Language-conditioning mechanisms and parameter accounting.

Four ways to tell the encoder which language it is hearing, all keyed by
an integer language id per sequence:

  embedding   a learned vector added to every frame at the stack input
  adversarial a frame-level discriminator trained through gradient
              reversal, pushing language identity OUT of the features
  adapters    per-language bottleneck residuals at the stack input,
              exactly the identity when training starts
  adaptive    per-language low-rank reweighting of linear maps: the
              effective weight is shared_base * (sum_i r_i s_i^T)
              + sum_j u_j v_j^T, matching the shared base exactly at init

Mechanisms hold stacked per-language parameters ([M, ...]) and gather
rows by the batch's language ids, so mixed-language batches update only
the rows that appeared.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .initializers import Initializer
from .numerics import Tensor, matmul, silu

FACTOR_INIT_SCALE = 0.02


def _check_lang_ids(lang_ids: np.ndarray, num_languages: int) -> np.ndarray:
    lang_ids = np.asarray(lang_ids)
    if lang_ids.ndim != 1:
        raise ContractError(f"lang_ids must be 1-D, got shape {lang_ids.shape}")
    if lang_ids.size and (lang_ids.min() < 0 or lang_ids.max() >= num_languages):
        raise ContractError(
            f"language ids must lie in [0, {num_languages}), got "
            f"[{lang_ids.min()}, {lang_ids.max()}]"
        )
    return lang_ids.astype(np.intp)


class LanguageEmbeddingTable:
    """One vector per language, added to every frame of its sequences."""

    def __init__(self, num_languages: int, dim: int, init: Initializer,
                 prefix: str = "langcond.embedding"):
        self.num_languages = num_languages
        self.table = init.normal(prefix, (num_languages, dim), FACTOR_INIT_SCALE)

    def __call__(self, x: Tensor, lang_ids: np.ndarray) -> Tensor:
        lang_ids = _check_lang_ids(lang_ids, self.num_languages)
        emb = self.table[lang_ids]  # [B, D]
        return x + emb.reshape((len(lang_ids), 1, x.shape[-1]))


class LanguageDiscriminator:
    """Frame-level language classifier: two hidden layers, then M logits."""

    def __init__(self, in_dim: int, hidden: int, num_languages: int,
                 init: Initializer, prefix: str = "langcond.disc"):
        self.num_languages = num_languages
        self.w1 = init.linear(f"{prefix}.l1.w", in_dim, hidden)
        self.b1 = init.zeros(f"{prefix}.l1.b", (hidden,))
        self.w2 = init.linear(f"{prefix}.l2.w", hidden, hidden)
        self.b2 = init.zeros(f"{prefix}.l2.b", (hidden,))
        self.w3 = init.linear(f"{prefix}.out.w", hidden, num_languages)
        self.b3 = init.zeros(f"{prefix}.out.b", (num_languages,))

    def __call__(self, h: Tensor) -> Tensor:
        """h: [..., in_dim] -> logits [..., num_languages]."""
        z = silu(matmul(h, self.w1) + self.b1)
        z = silu(matmul(z, self.w2) + self.b2)
        return matmul(z, self.w3) + self.b3


class AdapterBlock:
    """Per-language bottleneck residual: x + up(silu(down(x))).

    The up-projection starts at zero, so every adapter is the identity
    before the first update and the surrounding network behaves exactly
    as if the adapter were absent.
    """

    def __init__(self, num_languages: int, dim: int, bottleneck: int,
                 init: Initializer, prefix: str = "langcond.adapter"):
        self.num_languages = num_languages
        self.down_w = init.normal(f"{prefix}.down.w", (num_languages, dim, bottleneck),
                                  dim**-0.5)
        self.down_b = init.zeros(f"{prefix}.down.b", (num_languages, bottleneck))
        self.up_w = init.zeros(f"{prefix}.up.w", (num_languages, bottleneck, dim))
        self.up_b = init.zeros(f"{prefix}.up.b", (num_languages, dim))

    def __call__(self, x: Tensor, lang_ids: np.ndarray) -> Tensor:
        lang_ids = _check_lang_ids(lang_ids, self.num_languages)
        B = len(lang_ids)
        dw = self.down_w[lang_ids]  # [B, D, b]
        db = self.down_b[lang_ids].reshape((B, 1, -1))
        uw = self.up_w[lang_ids]
        ub = self.up_b[lang_ids].reshape((B, 1, -1))
        h = silu(matmul(x, dw) + db)
        return x + matmul(h, uw) + ub


class AdaptiveLinear:
    """A linear map whose weight is re-assembled per language.

    W(m) = base * (sum_i r_i s_i^T) + sum_j u_j v_j^T, with rank_scale
    multiplicative pairs and rank_bias additive pairs. Initialization
    pins W(m) = base for every language: the first multiplicative pair is
    all-ones (their outer product is the ones matrix), every other s_i
    and every v_j is zero. The zero-side factors still receive gradient
    because their partners are non-zero, so all ranks can activate;
    starting both sides at zero would freeze them.
    """

    def __init__(self, num_languages: int, base: Tensor, rank_scale: int,
                 rank_bias: int, init: Initializer, prefix: str,
                 bias: Tensor | None = None):
        d_in, d_out = base.shape
        if rank_scale < 1 or rank_bias < 1:
            raise ContractError(
                f"ranks must be >= 1, got scale={rank_scale}, bias={rank_bias}"
            )
        self.num_languages = num_languages
        self.rank_scale = rank_scale
        self.rank_bias = rank_bias
        self.base = base
        self.bias = bias
        M = num_languages
        r = init.normal(f"{prefix}.mult_r", (M, rank_scale, d_in), FACTOR_INIT_SCALE)
        r.data[:, 0, :] = 1.0
        self.mult_r = r
        s = init.zeros(f"{prefix}.mult_s", (M, rank_scale, d_out))
        s.data[:, 0, :] = 1.0
        self.mult_s = s
        self.add_u = init.normal(f"{prefix}.add_u", (M, rank_bias, d_in), FACTOR_INIT_SCALE)
        self.add_v = init.zeros(f"{prefix}.add_v", (M, rank_bias, d_out))

    def language_weights(self) -> Tensor:
        """Assembled weights for every language: [M, d_in, d_out]."""
        mult = matmul(self.mult_r.transpose((0, 2, 1)), self.mult_s)
        add = matmul(self.add_u.transpose((0, 2, 1)), self.add_v)
        return self.base * mult + add

    def __call__(self, x: Tensor, lang_ids: np.ndarray) -> Tensor:
        lang_ids = _check_lang_ids(lang_ids, self.num_languages)
        w = self.language_weights()[lang_ids]  # [B, d_in, d_out]
        out = matmul(x, w)
        if self.bias is not None:
            out = out + self.bias
        return out


# -- parameter accounting ------------------------------------------------------


def count_params(shapes: dict[str, tuple]) -> int:
    """Total scalar count of a name -> shape mapping."""
    return int(sum(int(np.prod(s, dtype=np.int64)) for s in shapes.values()))


def added_param_shapes(base: dict[str, tuple], variant: dict[str, tuple]) -> dict[str, tuple]:
    """Shapes present in the variant but not the baseline.

    Shared names must agree exactly; a silent shape change would corrupt
    the overhead accounting.
    """
    for name, shape in variant.items():
        if name in base and tuple(base[name]) != tuple(shape):
            raise ContractError(
                f"shared parameter {name} changed shape: {base[name]} -> {shape}"
            )
    return {k: v for k, v in variant.items() if k not in base}


def overhead_report(base: dict[str, tuple], variant: dict[str, tuple]) -> dict:
    """Added-parameter count and percentage relative to the baseline total."""
    added = added_param_shapes(base, variant)
    backbone = count_params(base)
    extra = count_params(added)
    return {
        "backbone_params": backbone,
        "added_params": extra,
        "added_percent": 100.0 * extra / backbone,
    }
