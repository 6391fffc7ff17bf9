"""Pre-training loop: Adam, linear warmup/decay, stepping, persistence.

One step is a pure function of (parameters, optimizer state, seed, step
index): the batch, the mask, and every noise draw come from generators
keyed by those integers. Interrupting a run and resuming from its
checkpoint therefore reproduces the exact metric stream of an
uninterrupted run.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import (
    Batch,
    Corpus,
    MaskingConfig,
    batch_at,
    language_sampling_probs,
    sample_masks,
)
from .checkpoint import restore_model, save_checkpoint
from .encoder import reduced_length, temperature_at
from .errors import ConfigError, ContractError, NumericError
from .model import LossSettings, Model, ModelConfig
from .numerics import Tensor, forward_backward

STEP_STREAM = 811  # rng stream tag for per-step model noise


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 3000
    warmup_steps: int = 200
    peak_lr: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    num_distractors: int = 10
    contrastive_temperature: float = 0.1
    beta_diversity: float = 0.1
    lambda_adv: float = 0.01
    alpha_ortho: float = 10.0
    mask_start_probability: float = 0.065
    mask_span: int = 10
    gumbel_start: float = 2.0
    gumbel_floor: float = 0.5
    gumbel_decay: float = 0.9995
    sampling_alpha: float = 0.5
    sampling_threshold: float | None = None  # None: median hours
    checkpoint_every: int = 1000
    freeze_frontend: bool = False
    max_grad_norm: float | None = None

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"need 0 < warmup_steps < total_steps, got "
                f"{self.warmup_steps} / {self.total_steps}"
            )
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def loss_settings(self) -> LossSettings:
        return LossSettings(
            num_distractors=self.num_distractors,
            contrastive_temperature=self.contrastive_temperature,
            beta_diversity=self.beta_diversity,
            lambda_adv=self.lambda_adv,
            alpha_ortho=self.alpha_ortho,
            masking=MaskingConfig(self.mask_start_probability, self.mask_span),
        )


def lr_at_step(step: int, cfg: TrainConfig) -> float:
    """Linear 0 -> peak over warmup, then linear peak -> 0 at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ContractError(
            f"step {step} outside schedule range [0, {cfg.total_steps}]"
        )
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


class Adam:
    """Standard Adam with bias correction; epsilon added outside the root."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9,
                 beta2: float = 0.98, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                raise ContractError(f"parameter {p.name or p.uid} has no gradient")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self, names: list[str]) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"t": np.array([self.t], dtype=np.int64)}
        for name, m, v in zip(names, self.m, self.v):
            out[f"m/{name}"] = m
            out[f"v/{name}"] = v
        return out

    def load_state(self, names: list[str], state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for i, name in enumerate(names):
            self.m[i] = state[f"m/{name}"].astype(np.float64, copy=True)
            self.v[i] = state[f"v/{name}"].astype(np.float64, copy=True)


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def train_step(
    model: Model,
    optimizer: Adam,
    batch: Batch,
    cfg: TrainConfig,
    step: int,
) -> dict:
    """One forward/backward/update. Returns the metrics record."""
    t0 = time.monotonic()
    settings = cfg.loss_settings()
    rng = np.random.default_rng([cfg.seed, STEP_STREAM, step])
    B, T, _ = batch.features.shape
    mask = sample_masks(B, reduced_length(T), settings.masking, rng)
    gumbel_t = temperature_at(
        step, cfg.gumbel_start, cfg.gumbel_floor, cfg.gumbel_decay
    )
    total, metrics = model.pretrain_loss(
        batch.features, batch.lang_ids, mask, settings, gumbel_t, rng, training=True
    )
    if not np.isfinite(total.data):
        bad = [k for k, val in metrics.items() if not np.isfinite(val)]
        raise NumericError(f"non-finite loss at step {step}: components {bad}")

    params = model.param_list()
    forward_backward(total, params)
    if cfg.freeze_frontend:
        for p in params:
            if p.name and p.name.startswith("frontend."):
                p.grad = np.zeros_like(p.data)
    gnorm = global_grad_norm(params)
    if cfg.max_grad_norm is not None and gnorm > cfg.max_grad_norm:
        scale = cfg.max_grad_norm / (gnorm + 1e-12)
        for p in params:
            p.grad *= scale
    lr = lr_at_step(min(step + 1, cfg.total_steps), cfg)
    optimizer.step(lr)

    metrics.update({
        "step": step,
        "lr": lr,
        "grad_norm": gnorm,
        "gumbel_temperature": gumbel_t,
        "wall_time_s": time.monotonic() - t0,
    })
    return metrics


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    final_metrics: dict = field(default_factory=dict)


def run_pretraining(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    corpus: Corpus,
    out_dir: str,
    resume_from: str | None = None,
) -> TrainResult:
    """Train for cfg.total_steps, checkpointing periodically and at the end.

    With ``resume_from``, training continues from the checkpoint's step;
    the produced metric records are identical to the ones an
    uninterrupted run would have written for those steps.
    """
    os.makedirs(out_dir, exist_ok=True)
    if len(corpus) == 0:
        raise ConfigError("corpus is empty")
    if model_cfg.num_languages != corpus.num_languages:
        raise ConfigError(
            f"model expects {model_cfg.num_languages} languages, corpus has "
            f"{corpus.num_languages}"
        )
    probs = language_sampling_probs(
        corpus.hours, cfg.sampling_alpha, cfg.sampling_threshold
    )

    start_step = 0
    if resume_from is not None:
        model, ckpt = restore_model(resume_from)
        if model.cfg != model_cfg:
            raise ConfigError("resume checkpoint was built with a different model config")
        start_step = ckpt["step"]
        names = sorted(model.params())
        optimizer = Adam(model.param_list(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        if ckpt["opt"]:
            optimizer.load_state(names, ckpt["opt"])
    else:
        model = Model(model_cfg, seed=cfg.seed)
        optimizer = Adam(model.param_list(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    names = sorted(model.params())
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    mode = "a" if (resume_from is not None and os.path.exists(metrics_path)) else "w"
    final_metrics: dict = {}
    with open(metrics_path, mode) as logf:
        for step in range(start_step, cfg.total_steps):
            batch = batch_at(corpus, probs, cfg.batch_size, cfg.seed, step)
            record = train_step(model, optimizer, batch, cfg, step)
            logf.write(json.dumps(record, sort_keys=True) + "\n")
            logf.flush()
            final_metrics = record
            done = step + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.total_steps:
                save_checkpoint(
                    ckpt_path, model, step=done,
                    optimizer_state=optimizer.state(names),
                    extra={"train_config": asdict(cfg)},
                )
    return TrainResult(
        checkpoint_path=ckpt_path,
        metrics_path=metrics_path,
        final_metrics=final_metrics,
    )


def read_metrics(path: str) -> list[dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def strip_wall_time(records: list[dict]) -> list[dict]:
    """Drop wall-clock fields so logs can be compared for determinism."""
    return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in records]
