"""Built-in self-checks.

Each check is small, named, and returns a machine-readable result, so a
broken build fails loudly with the culprit spelled out. The fault hooks
exist only for the test suite: they corrupt one computation on purpose
to prove the corresponding check actually has teeth.
"""

from __future__ import annotations

import math
import random
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .data import MaskingConfig, sample_mask
from .encoder import EncoderConfig, reduced_length
from .errors import ContractError
from .model import VARIANTS, LossSettings, Model, ModelConfig
from .numerics import Tensor, grad_check
from .objectives import (
    contrastive_loss,
    cross_entropy,
    diversity_loss,
    gradient_reversal,
    orthogonality_loss,
)
from .trainer import Adam

__all__ = [
    "CheckResult",
    "injected_fault",
    "check_gradients",
    "check_identity_at_init",
    "check_gradient_reversal",
    "check_masking_statistics",
    "check_adam_oracle",
    "check_closed_form_losses",
    "run_all_checks",
    "format_report",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    value: float  # the headline measurement
    threshold: float  # what it had to stay under (or reach)


_ACTIVE_FAULTS: set[str] = set()

FAULT_NAMES = (
    "gradient_bias",
    "identity_offset",
    "reversal_skipped",
    "mask_rate_bias",
    "adam_eps_inside_root",
)


@contextmanager
def injected_fault(name: str):
    """Corrupt one computation for the duration of the block."""
    if name not in FAULT_NAMES:
        raise ContractError(f"unknown fault {name!r}; known: {FAULT_NAMES}")
    _ACTIVE_FAULTS.add(name)
    try:
        yield
    finally:
        _ACTIVE_FAULTS.discard(name)


def _fault(name: str) -> bool:
    return name in _ACTIVE_FAULTS


def _check_encoder() -> EncoderConfig:
    return EncoderConfig(
        input_dim=8,
        conv_channels=(2, 2),
        model_dim=8,
        num_blocks=1,
        num_heads=2,
        ffn_dim=16,
        conv_kernel_size=3,
        projection_dim=8,
        quantizer_groups=2,
        quantizer_entries=4,
        dropout=0.0,
        layerdrop=0.0,
        max_positions=32,
    )


def _check_model_cfg(variant: str) -> ModelConfig:
    return ModelConfig(
        encoder=_check_encoder(),
        variant=variant,
        num_languages=2,
        tap_layer=1,
        disc_hidden=4,
        le_layer=0,
        adapter_bottleneck=2,
        k_scale=2,
        k_bias=2,
    )


# -- checks ------------------------------------------------------------------------


def check_gradients(
    seed: int = 0,
    tolerance: float = 1e-4,
    max_entries_per_param: int = 2,
    variants: tuple = VARIANTS,
) -> CheckResult:
    """Central-difference check of the full pretraining loss per variant."""
    B, T = 2, 16
    worst = 0.0
    worst_where = ""
    per_loss = {}
    for variant in variants:
        model = Model(_check_model_cfg(variant), seed=seed)
        rng = np.random.default_rng([seed, 5])
        feats = rng.standard_normal((B, T, 8))
        lang_ids = np.array([0, 1])
        t_red = reduced_length(T)
        mask = np.zeros((B, t_red), dtype=bool)
        mask[:, 1:4] = True
        settings = LossSettings(num_distractors=3)

        def loss_fn(model=model, feats=feats, lang_ids=lang_ids, mask=mask,
                    settings=settings):
            loss, _ = model.pretrain_loss(
                feats, lang_ids, mask, settings,
                gumbel_temperature=1.0,
                rng=np.random.default_rng([7, 7]),
                training=False,
                smooth=True,
            )
            if _fault("gradient_bias"):
                # A tape-invisible term: numeric differences see it, the
                # analytic gradient does not.
                leak = sum(float((p.data ** 2).sum()) for p in model.param_list())
                loss = loss + 1e-3 * leak
            return loss

        result = grad_check(
            loss_fn, model.param_list(),
            max_entries_per_param=max_entries_per_param, seed=seed,
        )
        per_loss[variant] = result.max_rel_err
        if result.max_rel_err > worst:
            worst = result.max_rel_err
            worst_where = f"{variant}:{result.worst_param}"
    passed = worst < tolerance
    breakdown = ", ".join(f"{v} {e:.2e}" for v, e in per_loss.items())
    return CheckResult(
        name="gradients",
        passed=passed,
        detail=f"max rel err per loss: {breakdown}; worst at {worst_where or 'n/a'}",
        value=worst,
        threshold=tolerance,
    )


def check_identity_at_init(seed: int = 0, tolerance: float = 1e-9) -> CheckResult:
    """Adapter variants must match the baseline bit-for-bit-ish at init."""
    rng = np.random.default_rng([seed, 11])
    feats = rng.standard_normal((2, 16, 8))
    lang_ids = np.array([0, 1])
    base = Model(_check_model_cfg("xlsr"), seed=seed)
    ref = base.encode(feats, lang_ids).context.data
    worst = 0.0
    fault_target = {"lsa": "langcond.adapter.up.w", "lsaw": "langcond.adapt_mid.mult_s"}
    for variant in ("lsa", "lsaw"):
        model = Model(_check_model_cfg(variant), seed=seed)
        if _fault("identity_offset"):
            model.params()[fault_target[variant]].data += 1e-6
        out = model.encode(feats, lang_ids).context.data
        worst = max(worst, float(np.abs(out - ref).max()))
    return CheckResult(
        name="identity_at_init",
        passed=worst <= tolerance,
        detail=f"max |variant - baseline| = {worst:.3e} at init",
        value=worst,
        threshold=tolerance,
    )


def check_gradient_reversal(seed: int = 0, tolerance: float = 1e-12) -> CheckResult:
    """d/dx [3x + reverse(2x)] must be exactly 3 - 2 per entry."""
    rng = np.random.default_rng([seed, 13])
    x = Tensor(rng.standard_normal(6), requires_grad=True, name="x")
    through = x * 3.0
    flipped = x * 2.0 if _fault("reversal_skipped") else gradient_reversal(x * 2.0)
    (through + flipped).sum().backward()
    err = float(np.abs(x.grad - 1.0).max())
    return CheckResult(
        name="gradient_reversal",
        passed=err <= tolerance,
        detail=f"max |grad - (3 - 2)| = {err:.3e}",
        value=err,
        threshold=tolerance,
    )


def check_masking_statistics(
    seed: int = 0, trials: int = 2000, tolerance: float = 0.02
) -> CheckResult:
    """Masked-fraction agreement with an independent stdlib oracle."""
    length, prob, span = 120, 0.065, 10
    cfg = MaskingConfig(start_probability=prob * (1.3 if _fault("mask_rate_bias") else 1.0),
                        span=span)
    rng = np.random.default_rng([seed, 17])
    impl = np.mean([sample_mask(length, cfg, rng).mean() for _ in range(trials)])

    oracle_rng = random.Random(seed + 17)
    num_starts = min(max(math.floor(prob * length + 0.5), 1), length)
    total = 0.0
    for _ in range(trials):
        mask = [False] * length
        for s in oracle_rng.sample(range(length), num_starts):
            for t in range(s, min(s + span, length)):
                mask[t] = True
        total += sum(mask) / length
    oracle = total / trials

    err = abs(float(impl) - oracle)
    return CheckResult(
        name="masking_statistics",
        passed=err <= tolerance,
        detail=f"masked fraction {impl:.4f} vs oracle {oracle:.4f} over {trials} trials",
        value=err,
        threshold=tolerance,
    )


def check_adam_oracle(tolerance: float = 1e-12) -> CheckResult:
    """Three hand-stepped updates must match the optimizer exactly."""
    b1, b2, eps = 0.9, 0.98, 1e-8
    grads = [0.5, -0.3, 0.2]
    lr = 0.1
    w, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        denom = (
            math.sqrt(v / (1 - b2**t) + eps)
            if _fault("adam_eps_inside_root")
            else math.sqrt(v / (1 - b2**t)) + eps
        )
        w -= lr * (m / (1 - b1**t)) / denom

    p = Tensor(np.array([1.0]), requires_grad=True, name="w")
    opt = Adam([p], beta1=b1, beta2=b2, eps=eps)
    for g in grads:
        p.grad = np.array([g])
        opt.step(lr)
    err = abs(float(p.data[0]) - w)
    return CheckResult(
        name="adam_oracle",
        passed=err <= tolerance,
        detail=f"|implementation - hand trace| = {err:.3e} after 3 steps",
        value=err,
        threshold=tolerance,
    )


def check_closed_form_losses(tolerance: float = 1e-9) -> CheckResult:
    """Known inputs with pencil-and-paper loss values."""
    errs = []

    # Two masked frames, each aligned with its own target and orthogonal to
    # the other's: logits come out exactly 10 and 0, loss = log(1 + e^-10).
    ctx = np.zeros((1, 2, 4))
    ctx[0, 0] = [1.0, 0.0, 0.0, 0.0]
    ctx[0, 1] = [0.0, 1.0, 0.0, 0.0]
    tgt = np.zeros((1, 2, 4))
    tgt[0, 0] = [1.0, 0.0, 0.0, 0.0]
    tgt[0, 1] = [0.0, 1.0, 0.0, 0.0]
    mask = np.array([[True, True]])
    loss, _ = contrastive_loss(
        Tensor(ctx), Tensor(tgt), mask, num_distractors=1,
        temperature=0.1, rng=np.random.default_rng(0),
    )
    expected = math.log(1.0 + math.exp(-10.0))
    errs.append(abs(float(loss.data) - expected) / expected)

    # Uniform logits over 16 classes: cross entropy is ln 16.
    logits = Tensor(np.zeros((5, 16)))
    ce, _ = cross_entropy(logits, np.arange(5) % 16)
    errs.append(abs(float(ce.data) - math.log(16.0)) / math.log(16.0))

    # Point-mass codes: diversity loss is 1 - 1/V.
    probs = np.zeros((6, 1, 4))
    probs[:, 0, 2] = 1.0
    div = diversity_loss(Tensor(probs))
    expected = 1.0 - 1.0 / 4.0
    errs.append(abs(float(div.data) - expected) / expected)

    # Two identical unit rows: off-diagonal Gram entries are 1, loss 2.
    table = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))
    ortho = orthogonality_loss(table)
    errs.append(abs(float(ortho.data) - 2.0) / 2.0)

    worst = max(errs)
    return CheckResult(
        name="closed_form_losses",
        passed=worst <= tolerance,
        detail=f"worst relative error {worst:.3e} over {len(errs)} closed forms",
        value=worst,
        threshold=tolerance,
    )


def run_all_checks(seed: int = 0) -> list[CheckResult]:
    return [
        check_gradients(seed),
        check_identity_at_init(seed),
        check_gradient_reversal(seed),
        check_masking_statistics(seed),
        check_adam_oracle(),
        check_closed_form_losses(),
    ]


def format_report(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"[{status}] {r.name}: {r.detail} (threshold {r.threshold:g})")
    failed = [r.name for r in results if not r.passed]
    lines.append(
        f"{len(results) - len(failed)}/{len(results)} checks passed"
        + (f"; failing: {', '.join(failed)}" if failed else "")
    )
    return "\n".join(lines)
